#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "drl/env.hpp"
#include "drl/epoch.hpp"
#include "drl/network.hpp"
#include "drl/params.hpp"

namespace drl {

struct RolloutSegment {
  std::vector<Tensor> states;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  bool terminal = false;
  std::optional<Tensor> final_state;  // present iff !terminal
  std::optional<double> episode_reward;  // total of an episode that ended here

  std::size_t length() const { return states.size(); }
};

struct A3cConfig {
  double gamma = 0.99;
  std::size_t t_max = 5;
  std::size_t worker_count = 3;
  std::uint64_t total_steps = 18000;
  ArchVariant variant = ArchVariant::vanilla_a3c;
  std::uint64_t seed = 0;
  double entropy_beta = 0;
  int forced_head = 0;               // 1 or 2 pins the updated head; 0 draws it
  bool bootstrap_same_head = false;  // bootstrap from the updated head
  bool deterministic = false;        // round-robin on the calling thread

  void validate() const {
    if (!is_actor_critic(variant)) throw ConfigError(std::string("not an actor-critic variant: ") + to_string(variant));
    if (worker_count == 0) throw ConfigError("a3c.workers must be >= 1");
    if (t_max == 0) throw ConfigError("a3c.tmax must be >= 1");
    if (gamma < 0 || gamma > 1) throw ConfigError("a3c.gamma must be in [0, 1]");
    if (forced_head < 0 || forced_head > 2) throw ConfigError("a3c.forced_head must be 0, 1 or 2");
    if (entropy_beta < 0) throw ConfigError("a3c.entropy_beta must be >= 0");
  }
};

inline constexpr std::uint64_t head_stream = 0x68656164;

struct WorkerState {
  std::size_t id = 0;
  std::unique_ptr<Environment> env;
  Snapshot<float> local;
  Rng rng;
  Rng head_rng;  // value-head coin, kept apart from action sampling
  GradMap<float> acc;
  Tensor obs;
  double episode_reward = 0;
  std::uint64_t local_steps = 0;
};

inline WorkerState make_worker(std::size_t id, const A3cConfig& cfg, EnvSpec spec) {
  WorkerState w;
  w.id = id;
  spec.seed += id;
  w.env = make_env(spec);
  w.rng = Rng(cfg.seed + id);
  w.head_rng = derive_rng(cfg.seed + id, head_stream);
  return w;
}

inline void sync_worker(WorkerState& w, const Snapshot<float>& snap, const Network& net) {
  w.local = snap;
  w.acc = zero_grads<float>(net);
}

inline void sync_worker(WorkerState& w, const SharedParamStore<float>& store, const Network& net) {
  sync_worker(w, store.snapshot(), net);
}

/// Up to t_max steps sampled from the local snapshot's policy.
inline RolloutSegment collect_rollout(WorkerState& w, const Network& net, std::size_t t_max) {
  if (t_max == 0) throw UsageError("t_max must be positive");
  if (w.env->needs_reset()) {
    w.obs = w.env->reset();
    w.episode_reward = 0;
  }
  RolloutSegment seg;
  for (std::size_t t = 0; t < t_max; ++t) {
    const auto out = forward(net, w.local.params, w.obs);
    const std::size_t a = action_sample(*out.policy, w.rng);
    StepResult r = w.env->step(a);
    seg.states.push_back(w.obs);
    seg.actions.push_back(a);
    seg.rewards.push_back(r.reward);
    w.episode_reward += r.reward;
    w.obs = std::move(r.observation);
    ++w.local_steps;
    if (r.terminal) {
      seg.episode_reward = w.episode_reward;
      // A step-cap ending still bootstraps from the state reached.
      seg.terminal = !r.truncated;
      break;
    }
  }
  if (!seg.terminal) seg.final_state = w.obs;
  return seg;
}

inline int choose_value_head(Rng& rng, ArchVariant variant) {
  if (!is_double(variant)) throw UsageError(std::string("no value-head choice for ") + to_string(variant));
  return coin_flip(rng) ? 1 : 2;
}

/// R for the end of the segment: 0 at a terminal, otherwise the value of
/// final_state. Double variants evaluate the head not being updated.
template <typename T>
double bootstrap_return(const RolloutSegment& seg, const Network& net, const ParamMap<T>& params,
                        int chosen_head, bool same_head = false) {
  const bool dbl = is_double(net.variant);
  if (dbl != (chosen_head == 1 || chosen_head == 2)) {
    throw UsageError("chosen head must be given exactly for double variants");
  }
  if (seg.terminal) return 0.0;
  if (!seg.final_state) throw UsageError("non-terminal segment without final_state");
  const auto out = forward(net, params, seg.final_state->cast<T>());
  if (!dbl) return static_cast<double>(out.values[0]);
  const int head = same_head ? chosen_head : 3 - chosen_head;
  return static_cast<double>(out.values[head - 1]);
}

inline std::vector<double> compute_returns(const std::vector<double>& rewards, double r0, double gamma) {
  std::vector<double> out(rewards.size());
  double r = r0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    r = rewards[i] + gamma * r;
    out[i] = r;
  }
  return out;
}

struct SegmentLosses {
  double policy = 0;  // sum of -log pi(a) * advantage
  double value = 0;   // sum of (R - V)^2
};

namespace detail {

inline std::size_t value_slot(const Network& net, int chosen_head) {
  return is_double(net.variant) ? static_cast<std::size_t>(chosen_head - 1) : 0;
}

template <typename T>
T entropy(const std::vector<T>& p) {
  T h{0};
  for (T x : p)
    if (x > T(0)) h -= x * std::log(x);
  return h;
}

}  // namespace detail

/// Adds the gradient of
///   sum_i [ -log pi(a_i|s_i) A_i + (R_i - V(s_i))^2 - beta H(pi(.|s_i)) ]
/// to `acc`, with A_i = R_i - V(s_i) held constant. V is the chosen head;
/// the other head's parameters get no entry.
template <typename T>
SegmentLosses accumulate_gradients(const Network& net, const ParamMap<T>& params, const RolloutSegment& seg,
                                   const std::vector<double>& returns, int chosen_head, double entropy_beta,
                                   GradMap<T>& acc) {
  if (returns.size() != seg.length() || seg.actions.size() != seg.length() ||
      seg.rewards.size() != seg.length()) {
    throw UsageError("segment and returns are misaligned");
  }
  const std::size_t slot = detail::value_slot(net, chosen_head);
  SegmentLosses losses;
  for (std::size_t i = 0; i < seg.length(); ++i) {
    const auto tr = forward_trace(net, params, seg.states[i].cast<T>());
    const auto& pi = *tr.output.policy;
    const T v = tr.output.values.at(slot);
    const T ret = static_cast<T>(returns[i]);
    const T adv = ret - v;
    const std::size_t a = seg.actions[i];
    HeadGrads<T> hg;
    hg.logits = std::vector<T>(pi.size());
    const T h = detail::entropy(pi);
    for (std::size_t k = 0; k < pi.size(); ++k) {
      T g = adv * (pi[k] - (k == a ? T(1) : T(0)));
      if (entropy_beta > 0 && pi[k] > T(0)) g += static_cast<T>(entropy_beta) * pi[k] * (std::log(pi[k]) + h);
      (*hg.logits)[k] = g;
    }
    hg.values[slot] = T(2) * (v - ret);
    for (auto& [name, g] : backward(net, params, tr, hg)) add_into(acc, name, g);
    losses.policy += -std::log(static_cast<double>(pi[a])) * static_cast<double>(adv);
    losses.value += static_cast<double>(adv * adv);
  }
  return losses;
}

/// The summed objective whose gradient accumulate_gradients computes, with
/// the advantages supplied as fixed numbers.
template <typename T>
T a3c_objective(const Network& net, const ParamMap<T>& params, const RolloutSegment& seg,
                const std::vector<double>& returns, const std::vector<T>& advantages, int chosen_head,
                double entropy_beta) {
  const std::size_t slot = detail::value_slot(net, chosen_head);
  T total{0};
  for (std::size_t i = 0; i < seg.length(); ++i) {
    const auto out = forward(net, params, seg.states[i].cast<T>());
    const T ret = static_cast<T>(returns[i]);
    const T err = ret - out.values.at(slot);
    total += -std::log((*out.policy)[seg.actions[i]]) * advantages[i] + err * err;
    total -= static_cast<T>(entropy_beta) * detail::entropy(*out.policy);
  }
  return total;
}

template <typename T>
std::vector<T> segment_advantages(const Network& net, const ParamMap<T>& params, const RolloutSegment& seg,
                                  const std::vector<double>& returns, int chosen_head) {
  const std::size_t slot = detail::value_slot(net, chosen_head);
  std::vector<T> out;
  for (std::size_t i = 0; i < seg.length(); ++i) {
    out.push_back(static_cast<T>(returns[i]) - forward(net, params, seg.states[i].cast<T>()).values.at(slot));
  }
  return out;
}

/// Applies the worker's accumulators as one update and advances T.
inline std::uint64_t async_apply(WorkerState& w, SharedParamStore<float>& store, const Network& net,
                                 int chosen_head, std::atomic<std::uint64_t>& global_steps,
                                 std::size_t segment_length, std::uint64_t* steps_after = nullptr) {
  if (is_double(net.variant)) {
    for (const auto& name : value_head_params(net, 3 - chosen_head)) w.acc.erase(name);
  }
  const std::uint64_t version = store.apply_delta(w.acc);
  const std::uint64_t t = global_steps.fetch_add(segment_length) + segment_length;
  if (steps_after) *steps_after = t;
  return version;
}

struct IterationReport {
  std::size_t worker_id = 0;
  std::size_t length = 0;
  std::uint64_t global_steps = 0;  // T after this iteration's increment
  std::uint64_t version = 0;
  int chosen_head = 0;  // 0 for vanilla
  int bootstrap_head = 0;
  std::optional<double> episode_reward;
  SegmentLosses losses;
};

/// sync -> rollout -> returns -> accumulate -> apply.
inline IterationReport run_iteration(WorkerState& w, SharedParamStore<float>& store, const Network& net,
                                     const A3cConfig& cfg, std::atomic<std::uint64_t>& global_steps) {
  sync_worker(w, store, net);
  RolloutSegment seg = collect_rollout(w, net, cfg.t_max);
  IterationReport rep;
  rep.worker_id = w.id;
  rep.length = seg.length();
  rep.episode_reward = seg.episode_reward;
  if (is_double(net.variant)) {
    rep.chosen_head = cfg.forced_head ? cfg.forced_head : choose_value_head(w.head_rng, net.variant);
    rep.bootstrap_head = cfg.bootstrap_same_head ? rep.chosen_head : 3 - rep.chosen_head;
  }
  const double r0 = bootstrap_return(seg, net, w.local.params, rep.chosen_head, cfg.bootstrap_same_head);
  const auto returns = compute_returns(seg.rewards, r0, cfg.gamma);
  rep.losses = accumulate_gradients(net, w.local.params, seg, returns, rep.chosen_head, cfg.entropy_beta, w.acc);
  rep.version = async_apply(w, store, net, rep.chosen_head, global_steps, seg.length(), &rep.global_steps);
  return rep;
}

/// Everything needed to continue a run: per-worker state, T, and the next
/// worker in round-robin order.
struct A3cRun {
  std::vector<WorkerState> workers;
  std::uint64_t global_steps = 0;
  std::size_t next_worker = 0;
};

inline A3cRun make_run(const A3cConfig& cfg, const EnvSpec& spec) {
  A3cRun run;
  for (std::size_t i = 0; i < cfg.worker_count; ++i) run.workers.push_back(make_worker(i, cfg, spec));
  return run;
}

/// Runs actor-learners until T > total_steps or `stop` is set. Reports
/// reach `on_report` on the calling thread, one at a time.
inline void run_training(const A3cConfig& cfg, SharedParamStore<float>& store, const Network& net, A3cRun& run,
                         const std::function<void(const IterationReport&)>& on_report,
                         const std::atomic<bool>* stop = nullptr) {
  cfg.validate();
  if (run.workers.size() != cfg.worker_count) throw UsageError("worker count does not match the run state");
  auto stopped = [&] { return stop && stop->load(); };
  std::atomic<std::uint64_t> T{run.global_steps};

  if (cfg.deterministic) {
    while (T.load() <= cfg.total_steps && !stopped()) {
      auto rep = run_iteration(run.workers[run.next_worker], store, net, cfg, T);
      run.next_worker = (run.next_worker + 1) % run.workers.size();
      if (on_report) on_report(rep);
    }
    run.global_steps = T.load();
    return;
  }

  MessageQueue<IterationReport> queue;
  std::atomic<bool> abort{false};
  std::atomic<std::size_t> live{run.workers.size()};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> threads;
  for (auto& w : run.workers) {
    threads.emplace_back([&, wp = &w] {
      try {
        while (T.load() <= cfg.total_steps && !abort.load() && !stopped()) {
          queue.push(run_iteration(*wp, store, net, cfg, T));
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        abort = true;
      }
      if (--live == 0) queue.close();
    });
  }
  while (auto rep = queue.pop()) {
    if (on_report && !abort.load()) {
      try {
        on_report(*rep);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        abort = true;
      }
    }
  }
  for (auto& t : threads) t.join();
  run.global_steps = T.load();
  if (failure) std::rethrow_exception(failure);
}

/// Feeds iteration reports into an epoch tracker.
inline std::vector<EpochRecord> track(EpochTracker& tracker, const IterationReport& rep, double wall_time_s) {
  if (rep.episode_reward) tracker.add_episode(*rep.episode_reward);
  tracker.add_policy_loss(rep.losses.policy, rep.length);
  tracker.add_value_loss(rep.losses.value, rep.length);
  return tracker.advance(rep.global_steps, wall_time_s);
}

}  // namespace drl
