#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "drl/env.hpp"
#include "drl/network.hpp"
#include "drl/params.hpp"
#include "drl/tabular.hpp"

namespace drl {

struct Transition {
  Tensor state;
  std::size_t action = 0;
  double reward = 0;
  Tensor next_state;
  bool terminal = false;
};

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    check_shape(t.state.shape(), t.next_state.shape(), "transition next_state");
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(t));
    } else {
      ring_[head_] = std::move(t);
    }
    head_ = (head_ + 1) % capacity_;
  }

  std::size_t size() const { return ring_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= size()) throw UsageError("replay index out of range");
    const std::size_t start = ring_.size() < capacity_ ? 0 : head_;
    return ring_[(start + i) % ring_.size()];
  }

  std::vector<const Transition*> sample_refs(std::size_t k, Rng& rng) const {
    if (size() < k) {
      throw InsufficientDataError("replay holds " + std::to_string(size()) + " transitions, need " +
                                  std::to_string(k));
    }
    std::vector<const Transition*> out(k);
    for (auto& p : out) p = &ring_[uniform_index(rng, ring_.size())];
    return out;
  }

  std::vector<Transition> sample(std::size_t k, Rng& rng) const {
    std::vector<Transition> out;
    for (const Transition* t : sample_refs(k, rng)) out.push_back(*t);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;
};

struct DqnConfig {
  double gamma = 0.99;
  std::size_t batch_size = 32;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  std::uint64_t epsilon_decay_steps = 10000;
  std::size_t learn_start = 500;
  std::size_t buffer_capacity = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (gamma < 0 || gamma > 1) throw ConfigError("dqn.gamma must be in [0, 1]");
    if (batch_size == 0) throw ConfigError("dqn.batch_size must be positive");
    if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1) {
      throw ConfigError("dqn epsilons must be in [0, 1]");
    }
    if (epsilon_end > epsilon_start) throw ConfigError("dqn.epsilon_end exceeds dqn.epsilon_start");
    if (epsilon_decay_steps == 0) throw ConfigError("dqn.epsilon_decay_steps must be positive");
    if (learn_start == 0) throw ConfigError("dqn.learn_start must be positive");
    if (buffer_capacity == 0) throw ConfigError("dqn.buffer_capacity must be positive");
  }
};

inline double epsilon_at(std::uint64_t step, const DqnConfig& cfg) {
  if (step >= cfg.epsilon_decay_steps) return cfg.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.epsilon_decay_steps);
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

template <typename T>
std::vector<T> q_values(const Network& net, const ParamMap<T>& params, const BasicTensor<T>& obs) {
  auto out = forward(net, params, obs);
  if (!out.q_values) throw UsageError(std::string("variant ") + to_string(net.variant) + " has no q head");
  return *out.q_values;
}

/// y = r for terminal transitions, else r + gamma max_a' Q(s', a') under the
/// same parameters being trained.
template <typename T>
T dqn_target(const Transition& t, const ParamMap<T>& params, const Network& net, double gamma) {
  if (t.terminal) return static_cast<T>(t.reward);
  const auto q = q_values(net, params, t.next_state.cast<T>());
  return static_cast<T>(t.reward + gamma * static_cast<double>(*std::max_element(q.begin(), q.end())));
}

template <typename T>
std::vector<T> dqn_targets(const std::vector<const Transition*>& batch, const ParamMap<T>& params,
                           const Network& net, double gamma) {
  std::vector<T> y;
  y.reserve(batch.size());
  for (const Transition* t : batch) y.push_back(dqn_target(*t, params, net, gamma));
  return y;
}

/// Mean squared error against fixed targets.
template <typename T>
T dqn_loss(const Network& net, const ParamMap<T>& params, const std::vector<const Transition*>& batch,
           const std::vector<T>& targets) {
  T loss{0};
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto q = q_values(net, params, batch[j]->state.cast<T>());
    const T d = targets[j] - q.at(batch[j]->action);
    loss += d * d;
  }
  return loss / static_cast<T>(batch.size());
}

/// Loss and parameter gradients with the targets treated as constants.
template <typename T>
std::pair<T, GradMap<T>> dqn_loss_and_grads(const Network& net, const ParamMap<T>& params,
                                            const std::vector<const Transition*>& batch,
                                            const std::vector<T>& targets) {
  if (batch.empty() || targets.size() != batch.size()) {
    throw UsageError("dqn batch and targets must be non-empty and aligned");
  }
  const T scale = T(1) / static_cast<T>(batch.size());
  GradMap<T> grads;
  T loss{0};
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto tr = forward_trace(net, params, batch[j]->state.cast<T>());
    const auto& q = *tr.output.q_values;
    const std::size_t a = batch[j]->action;
    if (a >= q.size()) throw UsageError("transition action out of range");
    const T d = q[a] - targets[j];
    loss += d * d * scale;
    HeadGrads<T> hg;
    hg.q_values = std::vector<T>(q.size(), T(0));
    (*hg.q_values)[a] = T(2) * d * scale;
    for (auto& [name, g] : backward(net, params, tr, hg)) add_into(grads, name, g);
  }
  return {loss, std::move(grads)};
}

/// Samples a minibatch, takes one Adam step on the squared TD error, and
/// returns the pre-step loss.
inline double dqn_train_step(const ReplayBuffer& buf, ParamStore<float>& store, AdamState<float>& opt,
                             const Network& net, const DqnConfig& cfg, Rng& rng) {
  const std::size_t need = std::max(cfg.batch_size, cfg.learn_start);
  if (buf.size() < need) {
    throw InsufficientDataError("replay holds " + std::to_string(buf.size()) +
                                " transitions, training needs " + std::to_string(need));
  }
  const auto batch = buf.sample_refs(cfg.batch_size, rng);
  const auto y = dqn_targets<float>(batch, store.entries(), net, cfg.gamma);
  auto [loss, grads] = dqn_loss_and_grads<float>(net, store.entries(), batch, y);
  adam_step(opt, store, grads);
  return loss;
}

/// Single-actor loop: act epsilon-greedily, store, and (after learn_start)
/// train once per environment step.
class DqnAgent {
 public:
  struct StepInfo {
    std::optional<double> episode_reward;  // set when the step ended an episode
    std::optional<double> loss;
  };

  DqnAgent(Network net, ParamStore<float> store, DqnConfig cfg, std::unique_ptr<Environment> env,
           AdamState<float> opt = {})
      : net_(std::move(net)), store_(std::move(store)), opt_(std::move(opt)), cfg_(cfg),
        env_(std::move(env)), buffer_(cfg.buffer_capacity), rng_(cfg.seed) {
    cfg_.validate();
    if (net_.variant != ArchVariant::dqn && net_.variant != ArchVariant::dueling_dqn) {
      throw ConfigError("dqn agent needs a q-valued network");
    }
  }

  StepInfo step() {
    if (env_->needs_reset()) {
      obs_ = env_->reset();
      episode_reward_ = 0;
    }
    const auto qf = q_values(net_, store_.entries(), obs_);
    const std::vector<double> q(qf.begin(), qf.end());
    const std::size_t a = epsilon_greedy_action(q, epsilon_at(steps_, cfg_), rng_);
    StepResult r = env_->step(a);
    buffer_.push({obs_, a, r.reward, r.observation, r.terminal && !r.truncated});
    episode_reward_ += r.reward;
    obs_ = std::move(r.observation);
    ++steps_;
    StepInfo info;
    if (buffer_.size() >= std::max(cfg_.batch_size, cfg_.learn_start)) {
      info.loss = dqn_train_step(buffer_, store_, opt_, net_, cfg_, rng_);
    }
    if (r.terminal) info.episode_reward = episode_reward_;
    return info;
  }

  std::size_t greedy_action(const Tensor& obs) const { return argmax(q_values(net_, store_.entries(), obs)); }

  const Network& network() const { return net_; }
  const ParamStore<float>& store() const { return store_; }
  ParamStore<float>& store() { return store_; }
  const AdamState<float>& optimizer() const { return opt_; }
  AdamState<float>& optimizer() { return opt_; }
  const DqnConfig& config() const { return cfg_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  ReplayBuffer& buffer() { return buffer_; }
  Environment& env() { return *env_; }
  const Environment& env() const { return *env_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  std::uint64_t steps() const { return steps_; }
  const Tensor& observation() const { return obs_; }
  double episode_reward() const { return episode_reward_; }

  void restore_progress(std::uint64_t steps, Tensor obs, double episode_reward) {
    steps_ = steps;
    obs_ = std::move(obs);
    episode_reward_ = episode_reward;
  }

 private:
  Network net_;
  ParamStore<float> store_;
  AdamState<float> opt_;
  DqnConfig cfg_;
  std::unique_ptr<Environment> env_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::uint64_t steps_ = 0;
  Tensor obs_;
  double episode_reward_ = 0;
};

}  // namespace drl
