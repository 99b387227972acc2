#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drl/env.hpp"
#include "drl/network.hpp"
#include "drl/random.hpp"

namespace drl {

/// Dense [num_states x num_actions] action-value table, zero-initialized.
class QTable {
 public:
  QTable() = default;
  QTable(std::size_t num_states, std::size_t num_actions)
      : states_(num_states), actions_(num_actions), values_(num_states * num_actions, 0.0) {
    if (num_states == 0 || num_actions == 0) throw ConfigError("QTable dims must be positive");
  }

  std::size_t num_states() const { return states_; }
  std::size_t num_actions() const { return actions_; }

  double& at(std::size_t s, std::size_t a) {
    check(s, a);
    return values_[s * actions_ + a];
  }
  double at(std::size_t s, std::size_t a) const {
    check(s, a);
    return values_[s * actions_ + a];
  }

  std::span<const double> row(std::size_t s) const {
    check(s, 0);
    return {values_.data() + s * actions_, actions_};
  }

  double row_max(std::size_t s) const {
    auto r = row(s);
    return *std::max_element(r.begin(), r.end());
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  void randomize(double bound, Rng& rng) {
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : values_) v = d(rng);
  }

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  void check(std::size_t s, std::size_t a) const {
    if (s >= states_ || a >= actions_) {
      throw UsageError("QTable index (" + std::to_string(s) + ", " + std::to_string(a) +
                       ") out of range [" + std::to_string(states_) + " x " +
                       std::to_string(actions_) + "]");
    }
  }

  std::size_t states_ = 0, actions_ = 0;
  std::vector<double> values_;
};

struct DoubleQTable {
  QTable qa;
  QTable qb;

  DoubleQTable() = default;
  DoubleQTable(std::size_t s, std::size_t a) : qa(s, a), qb(s, a) {}

  std::vector<double> sum_row(std::size_t s) const {
    std::vector<double> out(qa.num_actions());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = qa.at(s, a) + qb.at(s, a);
    return out;
  }
};

struct TabularConfig {
  double alpha = 0.1;
  double gamma = 0.9;
  double epsilon = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0 && alpha <= 1)) throw ConfigError("alpha must be in (0, 1]");
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("gamma must be in [0, 1]");
    if (!(epsilon >= 0 && epsilon <= 1)) throw ConfigError("epsilon must be in [0, 1]");
  }
};

struct TabularTransition {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0;
  std::size_t next_state = 0;
  bool terminal = false;
};

/// Q(s,a) += alpha (target - Q(s,a)), target = r or r + gamma max Q(s', .).
inline void q_learning_update(QTable& table, const TabularTransition& t, double alpha, double gamma) {
  double target = t.reward;
  if (!t.terminal) target += gamma * table.row_max(t.next_state);
  double& q = table.at(t.state, t.action);
  q += alpha * (target - q);
}

inline void q_learning_update(QTable& table, const TabularTransition& t, const TabularConfig& cfg) {
  q_learning_update(table, t, cfg.alpha, cfg.gamma);
}

enum class Head { a, b };

/// Updates exactly one table: the chosen table picks a* = argmax at s' and
/// the other table evaluates it.
inline void double_q_update(DoubleQTable& table, const TabularTransition& t, double alpha,
                            double gamma, Head coin) {
  QTable& upd = coin == Head::a ? table.qa : table.qb;
  const QTable& other = coin == Head::a ? table.qb : table.qa;
  double target = t.reward;
  if (!t.terminal) {
    const std::size_t best = argmax(upd.row(t.next_state));
    target += gamma * other.at(t.next_state, best);
  }
  double& q = upd.at(t.state, t.action);
  q += alpha * (target - q);
}

inline void double_q_update(DoubleQTable& table, const TabularTransition& t,
                            const TabularConfig& cfg, Head coin) {
  double_q_update(table, t, cfg.alpha, cfg.gamma, coin);
}

/// Uniform over all actions with probability epsilon, else greedy with the
/// lowest index winning ties.
inline std::size_t epsilon_greedy_action(std::span<const double> q_values, double epsilon, Rng& rng) {
  if (q_values.empty()) throw UsageError("epsilon_greedy_action: empty value vector");
  if (uniform01(rng) < epsilon) return uniform_index(rng, q_values.size());
  return argmax(q_values);
}

inline std::vector<std::size_t> greedy_policy(const QTable& table) {
  std::vector<std::size_t> out(table.num_states());
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = argmax(table.row(s));
  return out;
}

enum class TabularAlgo { q_learning, double_q };

inline const char* to_string(TabularAlgo a) {
  return a == TabularAlgo::q_learning ? "q-learning" : "double-q";
}

/// Step-size rule: constant alpha, or alpha(s,a) = 1 / n(s,a)^exponent with
/// n the number of updates applied to that table entry.
struct AlphaSchedule {
  bool polynomial = false;
  double exponent = 0.8;
};

/// Runs tabular Q-learning or Double Q-learning against an enumerable env.
class TabularLearner {
 public:
  struct EpisodeStats {
    double reward = 0;
    std::size_t steps = 0;
    bool left_at_start = false;  // first action was index 0
  };

  TabularLearner(TabularAlgo algo, const TabularConfig& cfg, std::size_t num_states,
                 std::size_t num_actions, AlphaSchedule schedule = {})
      : algo_(algo), cfg_(cfg), schedule_(schedule), rng_(cfg.seed),
        tables_(num_states, num_actions),
        counts_a_(num_states * num_actions, 0), counts_b_(num_states * num_actions, 0) {
    cfg_.validate();
  }

  void randomize(double bound = 0.01) {
    tables_.qa.randomize(bound, rng_);
    if (algo_ == TabularAlgo::double_q) tables_.qb.randomize(bound, rng_);
  }

  TabularAlgo algo() const { return algo_; }
  const QTable& q() const { return tables_.qa; }
  const DoubleQTable& tables() const { return tables_; }
  DoubleQTable& tables() { return tables_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  const TabularConfig& config() const { return cfg_; }

  /// Action values used for acting: Q, or QA + QB for Double Q-learning.
  std::vector<double> acting_values(std::size_t s) const {
    if (algo_ == TabularAlgo::double_q) return tables_.sum_row(s);
    auto r = tables_.qa.row(s);
    return {r.begin(), r.end()};
  }

  std::size_t act(std::size_t s) {
    const auto v = acting_values(s);
    return epsilon_greedy_action(v, cfg_.epsilon, rng_);
  }

  void update(const TabularTransition& t) {
    if (algo_ == TabularAlgo::q_learning) {
      q_learning_update(tables_.qa, t, next_alpha(counts_a_, t), cfg_.gamma);
    } else {
      const Head coin = coin_flip(rng_) ? Head::a : Head::b;
      auto& counts = coin == Head::a ? counts_a_ : counts_b_;
      double_q_update(tables_, t, next_alpha(counts, t), cfg_.gamma, coin);
    }
  }

  /// Resets env and plays one episode, learning online.
  EpisodeStats run_episode(Environment& env) {
    EpisodeStats stats;
    Tensor obs = env.reset();
    std::size_t s = state_index(env, obs);
    while (true) {
      const std::size_t a = act(s);
      if (stats.steps == 0) stats.left_at_start = a == 0;
      StepResult r = env.step(a);
      const std::size_t next = state_index(env, r.observation);
      update({s, a, r.reward, next, r.terminal && !r.truncated});
      stats.reward += r.reward;
      ++stats.steps;
      if (r.terminal) break;
      s = next;
    }
    return stats;
  }

  /// Runs exactly `steps` environment steps, resetting as episodes end.
  /// `on_episode` sees each completed episode's total reward.
  void run_steps(Environment& env, std::size_t steps,
                 const std::function<void(double)>& on_episode = {}) {
    for (std::size_t i = 0; i < steps; ++i) {
      if (env.needs_reset()) {
        cur_state_ = state_index(env, env.reset());
        episode_reward_ = 0;
      }
      const std::size_t a = act(cur_state_);
      StepResult r = env.step(a);
      const std::size_t next = state_index(env, r.observation);
      update({cur_state_, a, r.reward, next, r.terminal && !r.truncated});
      episode_reward_ += r.reward;
      cur_state_ = next;
      if (r.terminal && on_episode) on_episode(episode_reward_);
    }
  }

  // In-progress episode bookkeeping, exposed for checkpoint/resume.
  std::size_t current_state() const { return cur_state_; }
  double episode_reward() const { return episode_reward_; }
  void restore_progress(std::size_t state, double reward) {
    cur_state_ = state;
    episode_reward_ = reward;
  }
  std::vector<std::uint64_t>& counts(Head h) { return h == Head::a ? counts_a_ : counts_b_; }
  const std::vector<std::uint64_t>& counts(Head h) const { return h == Head::a ? counts_a_ : counts_b_; }

  static std::size_t state_index(const Environment& env, const Tensor& obs) {
    if (obs.ndim() == 1) return argmax(std::span<const float>(obs.data()));
    return env.current_state();
  }

 private:
  double next_alpha(std::vector<std::uint64_t>& counts, const TabularTransition& t) {
    const std::size_t idx = t.state * tables_.qa.num_actions() + t.action;
    if (idx >= counts.size()) throw UsageError("transition index out of range");
    const auto n = ++counts[idx];
    if (!schedule_.polynomial) return cfg_.alpha;
    return 1.0 / std::pow(static_cast<double>(n), schedule_.exponent);
  }

  TabularAlgo algo_;
  TabularConfig cfg_;
  AlphaSchedule schedule_;
  Rng rng_;
  DoubleQTable tables_;
  std::vector<std::uint64_t> counts_a_, counts_b_;
  std::size_t cur_state_ = 0;
  double episode_reward_ = 0;
};

/// One seed of the maximization-bias study on overest_mdp.
struct BiasRun {
  std::uint64_t seed = 0;
  TabularAlgo algo = TabularAlgo::q_learning;
  std::size_t episodes = 0;
  double estimate_b = 0;         // the learner's estimate of V(B)
  double frac_left_chosen = 0;   // fraction of episodes that went left at A
  bool greedy_left = false;      // final greedy action at A is "left"
};

struct BiasConfig {
  std::size_t k = 8;
  double gamma = 0.95;
  double epsilon = 0.1;
  std::size_t episodes = 10000;
  double mean = -0.1;
  double stddev = 1.0;
};

/// Estimate of V(B): max_a Q(B, a) for Q-learning; for Double Q-learning the
/// cross-evaluated value it bootstraps from, averaged over both orders:
/// (QB(B, argmax QA(B,.)) + QA(B, argmax QB(B,.))) / 2.
inline double bias_estimate(const TabularLearner& learner) {
  const std::size_t b = OverestMdp::state_b;
  if (learner.algo() == TabularAlgo::q_learning) return learner.q().row_max(b);
  const auto& t = learner.tables();
  const double ab = t.qb.at(b, argmax(t.qa.row(b)));
  const double ba = t.qa.at(b, argmax(t.qb.row(b)));
  return 0.5 * (ab + ba);
}

inline BiasRun run_bias_seed(TabularAlgo algo, std::uint64_t seed, const BiasConfig& bc) {
  EnvSpec spec{EnvId::overest_mdp, seed,
               {{"k", std::to_string(bc.k)}, {"mean", std::to_string(bc.mean)},
                {"stddev", std::to_string(bc.stddev)}}};
  auto env = make_env(spec);
  TabularConfig cfg{1.0, bc.gamma, bc.epsilon, seed};
  TabularLearner learner(algo, cfg, env->num_states(), env->action_count(), {true, 0.8});
  std::size_t lefts = 0;
  for (std::size_t e = 0; e < bc.episodes; ++e) {
    if (learner.run_episode(*env).left_at_start) ++lefts;
  }
  BiasRun out;
  out.seed = seed;
  out.algo = algo;
  out.episodes = bc.episodes;
  out.estimate_b = bias_estimate(learner);
  out.frac_left_chosen = bc.episodes ? static_cast<double>(lefts) / bc.episodes : 0.0;
  out.greedy_left = argmax(learner.acting_values(OverestMdp::state_a)) == OverestMdp::left;
  return out;
}

}  // namespace drl
