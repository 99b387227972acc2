#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>

#include "drl/random.hpp"
#include "drl/tensor.hpp"

namespace drl {

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

/// Named parameter tensors plus a version counter bumped by every update.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, BasicTensor<T> value) {
    if (!entries_.emplace(name, std::move(value)).second) {
      throw UsageError("duplicate parameter name '" + name + "'");
    }
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  const BasicTensor<T>& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }

  // Shapes are fixed once registered; only values may be overwritten.
  void set(const std::string& name, BasicTensor<T> value) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
    check_shape(it->second.shape(), value.shape(), "parameter '" + name + "'");
    it->second = std::move(value);
  }

  const ParamMap<T>& entries() const { return entries_; }
  ParamMap<T>& mutable_entries() { return entries_; }

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }
  void bump_version() { ++version_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

 private:
  ParamMap<T> entries_;
  std::uint64_t version_ = 0;
};

template <typename T>
struct Snapshot {
  ParamMap<T> params;
  std::uint64_t version = 0;
};

template <typename T>
Snapshot<T> snapshot(const ParamStore<T>& store) {
  return {store.entries(), store.version()};
}

template <typename T>
struct AdamState {
  T learning_rate = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  std::uint64_t step = 0;
  ParamMap<T> first_moment;
  ParamMap<T> second_moment;
};

template <typename T>
void validate_grads(const ParamStore<T>& params, const GradMap<T>& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw UsageError("gradient for unknown parameter '" + name + "'");
    check_shape(params.get(name).shape(), g.shape(), "gradient '" + name + "'");
  }
}

/// Bias-corrected Adam. Parameters without an entry in `grads` keep their
/// values and moments; the shared step counter still advances.
template <typename T>
void adam_step(AdamState<T>& opt, ParamStore<T>& params, const GradMap<T>& grads) {
  validate_grads(params, grads);
  for (const auto& [name, g] : grads) require_finite(g, "gradient '" + name + "'");
  opt.step += 1;
  const T c1 = T(1) - std::pow(opt.beta1, static_cast<T>(opt.step));
  const T c2 = T(1) - std::pow(opt.beta2, static_cast<T>(opt.step));
  for (const auto& [name, g] : grads) {
    auto& theta = params.mutable_entries().at(name);
    auto [mit, m_new] = opt.first_moment.try_emplace(name, theta.shape());
    auto [vit, v_new] = opt.second_moment.try_emplace(name, theta.shape());
    auto& m = mit->second;
    auto& v = vit->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (T(1) - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (T(1) - opt.beta2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      theta[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    }
    require_finite(theta, "parameter '" + name + "'");
  }
  params.bump_version();
}

/// The global store shared by actor-learners: parameters and the single
/// optimizer state behind one mutex. snapshot() and apply_delta() are each
/// atomic with respect to one another.
template <typename T>
class SharedParamStore {
 public:
  SharedParamStore() = default;
  SharedParamStore(ParamStore<T> store, AdamState<T> opt)
      : store_(std::move(store)), opt_(std::move(opt)) {}

  Snapshot<T> snapshot() const {
    std::lock_guard lock(mu_);
    return drl::snapshot(store_);
  }

  std::uint64_t apply_delta(const GradMap<T>& grads) {
    std::lock_guard lock(mu_);
    adam_step(opt_, store_, grads);
    return store_.version();
  }

  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return store_.version();
  }

  // Exclusive access for setup, checkpointing, and tests.
  template <typename F>
  decltype(auto) with_lock(F&& fn) {
    std::lock_guard lock(mu_);
    return fn(store_, opt_);
  }

  template <typename F>
  decltype(auto) with_lock(F&& fn) const {
    std::lock_guard lock(mu_);
    return fn(store_, opt_);
  }

 private:
  mutable std::mutex mu_;
  ParamStore<T> store_;
  AdamState<T> opt_;
};

template <typename T>
void init_uniform(BasicTensor<T>& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
}

template <typename T>
void add_into(GradMap<T>& acc, const std::string& name, const BasicTensor<T>& g) {
  auto it = acc.find(name);
  if (it == acc.end()) {
    acc.emplace(name, g);
  } else {
    it->second += g;
  }
}

}  // namespace drl
