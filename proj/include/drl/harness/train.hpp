#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "drl/a3c.hpp"
#include "drl/dqn.hpp"
#include "drl/epoch.hpp"
#include "drl/harness/checkpoint.hpp"
#include "drl/harness/config.hpp"
#include "drl/harness/metrics.hpp"
#include "drl/tabular.hpp"

namespace drl {

/// Greedy action for an observation; the env is available for tabular
/// learners that index states through it.
using GreedyPolicy = std::function<std::size_t(const Environment&, const Tensor&)>;
using EpochSink = std::function<void(const EpochRecord&)>;

struct EvalResult {
  double mean = 0;
  double stddev = 0;
  std::size_t episodes = 0;
};

inline EvalResult evaluate_policy(const EnvSpec& spec, const GreedyPolicy& policy, std::size_t episodes) {
  if (episodes == 0) throw UsageError("evaluation needs at least one episode");
  auto env = make_env(spec);
  std::vector<double> totals;
  for (std::size_t e = 0; e < episodes; ++e) {
    Tensor obs = env->reset();
    double total = 0;
    while (true) {
      StepResult r = env->step(policy(*env, obs));
      total += r.reward;
      obs = std::move(r.observation);
      if (r.terminal) break;
    }
    totals.push_back(total);
  }
  EvalResult out;
  out.episodes = episodes;
  for (double t : totals) out.mean += t;
  out.mean /= static_cast<double>(episodes);
  for (double t : totals) out.stddev += (t - out.mean) * (t - out.mean);
  out.stddev = std::sqrt(out.stddev / static_cast<double>(episodes));
  return out;
}

inline constexpr std::uint64_t init_stream = 0x696e6974;

inline ArchVariant variant_for(const TrainConfig& cfg) {
  if (cfg.algo() == "dqn") return ArchVariant::dqn;
  if (cfg.algo() == "dueling-dqn") return ArchVariant::dueling_dqn;
  return parse_variant(cfg.algo());
}

inline ArchConfig arch_for(const TrainConfig& cfg, const Environment& env) {
  ArchConfig a = desk_arch(env.observation_shape(), env.action_count());
  a.hidden = cfg.count("arch.hidden", 1);
  const auto channels = cfg.count("arch.conv_channels");
  if (channels == 0) {
    a.convs.clear();
  } else {
    for (auto& c : a.convs) c.channels = channels;
  }
  return a;
}

/// One algorithm family behind a common train/checkpoint/evaluate surface.
class Trainer {
 public:
  virtual ~Trainer() = default;

  // Trains until the step budget is used (A3C: until T exceeds it).
  virtual void train(std::uint64_t total_steps, EpochTracker& tracker, const Stopwatch& clock,
                     const EpochSink& sink) = 0;
  virtual void save(Checkpoint& ck) const = 0;
  virtual void load(const Checkpoint& ck) = 0;
  virtual GreedyPolicy greedy() const = 0;
  virtual std::uint64_t global_steps() const = 0;

  void request_stop() { stop_ = true; }

 protected:
  std::atomic<bool> stop_{false};
};

namespace detail {

inline std::string join_exact(const std::vector<double>& v) {
  std::string s;
  for (double x : v) (s += exact_str(x)) += ' ';
  return s;
}

inline std::vector<double> split_exact(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : split_ws(s)) out.push_back(parse_exact(tok));
  return out;
}

inline void emit(EpochTracker& tracker, std::uint64_t steps, const Stopwatch& clock, const EpochSink& sink) {
  for (const auto& r : tracker.advance(steps, clock.seconds()))
    if (sink) sink(r);
}

}  // namespace detail

class TabularTrainer final : public Trainer {
 public:
  explicit TabularTrainer(const TrainConfig& cfg)
      : env_(make_env(cfg.env_spec())),
        learner_(cfg.algo() == "double-q" ? TabularAlgo::double_q : TabularAlgo::q_learning,
                 {cfg.real("tabular.alpha"), cfg.real("tabular.gamma"), cfg.real("tabular.epsilon"), cfg.count("seed")},
                 env_->num_states(), env_->action_count()) {
    if (!env_->enumerable()) throw ConfigError("tabular algorithms need an enumerable env");
    if (const double b = cfg.real("tabular.init_bound"); b > 0) learner_.randomize(b);
  }

  void train(std::uint64_t total, EpochTracker& tracker, const Stopwatch& clock, const EpochSink& sink) override {
    while (steps_ < total && !stop_) {
      learner_.run_steps(*env_, 1, [&](double r) { tracker.add_episode(r); });
      ++steps_;
      detail::emit(tracker, steps_, clock, sink);
    }
  }

  void save(Checkpoint& ck) const override {
    const auto& t = learner_.tables();
    ck.set("tabular.qa", detail::join_exact(t.qa.values()));
    ck.set("tabular.qb", detail::join_exact(t.qb.values()));
    auto counts = [](const std::vector<std::uint64_t>& c) {
      std::string s;
      for (auto x : c) (s += std::to_string(x)) += ' ';
      return s;
    };
    ck.set("tabular.counts_a", counts(learner_.counts(Head::a)));
    ck.set("tabular.counts_b", counts(learner_.counts(Head::b)));
    ck.set("tabular.rng", rng_state(learner_.rng()));
    ck.set("tabular.progress", std::to_string(learner_.current_state()) + ' ' + exact_str(learner_.episode_reward()));
    ck.set("env.state", env_->save_state());
    ck.set("global_step", std::to_string(steps_));
  }

  void load(const Checkpoint& ck) override {
    auto& t = learner_.tables();
    auto fill = [](QTable& q, const std::vector<double>& v) {
      if (v.size() != q.values().size()) throw ConfigError("checkpoint Q-table does not fit this env");
      q.values() = v;
    };
    fill(t.qa, detail::split_exact(ck.get("tabular.qa")));
    fill(t.qb, detail::split_exact(ck.get("tabular.qb")));
    auto counts = [](std::vector<std::uint64_t>& c, const std::string& s) {
      const auto tok = split_ws(s);
      if (tok.size() != c.size()) throw ConfigError("checkpoint visit counts do not fit this env");
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::stoull(tok[i]);
    };
    counts(learner_.counts(Head::a), ck.get("tabular.counts_a"));
    counts(learner_.counts(Head::b), ck.get("tabular.counts_b"));
    restore_rng(learner_.rng(), ck.get("tabular.rng"));
    const auto p = split_ws(ck.get("tabular.progress"));
    learner_.restore_progress(std::stoull(p.at(0)), parse_exact(p.at(1)));
    env_->load_state(ck.get("env.state"));
    steps_ = std::stoull(ck.get("global_step"));
  }

  GreedyPolicy greedy() const override {
    const TabularLearner* l = &learner_;
    return [l](const Environment& env, const Tensor& obs) {
      return argmax(l->acting_values(TabularLearner::state_index(env, obs)));
    };
  }

  std::uint64_t global_steps() const override { return steps_; }
  const TabularLearner& learner() const { return learner_; }

 private:
  std::unique_ptr<Environment> env_;
  TabularLearner learner_;
  std::uint64_t steps_ = 0;
};

class DqnTrainer final : public Trainer {
 public:
  explicit DqnTrainer(const TrainConfig& cfg) : agent_(make_agent(cfg)) {}

  void train(std::uint64_t total, EpochTracker& tracker, const Stopwatch& clock, const EpochSink& sink) override {
    while (agent_.steps() < total && !stop_) {
      const auto info = agent_.step();
      if (info.episode_reward) tracker.add_episode(*info.episode_reward);
      if (info.loss) tracker.add_value_loss(*info.loss, 1);
      detail::emit(tracker, agent_.steps(), clock, sink);
    }
  }

  void save(Checkpoint& ck) const override {
    add_params(ck, agent_.store());
    add_optimizer(ck, agent_.optimizer());
    ck.set("global_step", std::to_string(agent_.steps()));
    ck.set("dqn.rng", rng_state(agent_.rng()));
    ck.set("env.state", agent_.env().save_state());
    ck.set("dqn.episode_reward", exact_str(agent_.episode_reward()));
    if (!agent_.env().needs_reset()) ck.add_tensor("dqn.obs", agent_.observation());
    const auto& buf = agent_.buffer();
    ck.set("replay.size", std::to_string(buf.size()));
    if (buf.size() == 0) return;
    Shape s = buf.at(0).state.shape();
    s.insert(s.begin(), buf.size());
    Tensor states(s), next(s);
    const std::size_t n = buf.at(0).state.size();
    std::string actions, rewards, terminals;
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const auto& t = buf.at(i);
      std::copy(t.state.data().begin(), t.state.data().end(), states.storage().begin() + i * n);
      std::copy(t.next_state.data().begin(), t.next_state.data().end(), next.storage().begin() + i * n);
      (actions += std::to_string(t.action)) += ' ';
      (rewards += exact_str(t.reward)) += ' ';
      terminals += t.terminal ? '1' : '0';
    }
    ck.add_tensor("replay.states", std::move(states));
    ck.add_tensor("replay.next_states", std::move(next));
    ck.set("replay.actions", actions);
    ck.set("replay.rewards", rewards);
    ck.set("replay.terminal", terminals);
  }

  void load(const Checkpoint& ck) override {
    load_params(ck, agent_.store());
    load_optimizer(ck, agent_.optimizer());
    restore_rng(agent_.rng(), ck.get("dqn.rng"));
    agent_.env().load_state(ck.get("env.state"));
    const Tensor* obs = ck.find_tensor("dqn.obs");
    agent_.restore_progress(std::stoull(ck.get("global_step")), obs ? *obs : Tensor(),
                            parse_exact(ck.get("dqn.episode_reward")));
    auto& buf = agent_.buffer();
    buf = ReplayBuffer(buf.capacity());
    const std::size_t size = std::stoull(ck.get("replay.size"));
    if (size == 0) return;
    const Tensor& states = ck.tensor("replay.states");
    const Tensor& next = ck.tensor("replay.next_states");
    const auto actions = split_ws(ck.get("replay.actions"));
    const auto rewards = detail::split_exact(ck.get("replay.rewards"));
    const auto& terminal = ck.get("replay.terminal");
    if (actions.size() != size || rewards.size() != size || terminal.size() != size ||
        states.shape().at(0) != size) {
        throw ConfigError("checkpoint replay memory is inconsistent");
    }
    Shape s(states.shape().begin() + 1, states.shape().end());
    const std::size_t n = shape_size(s);
    for (std::size_t i = 0; i < size; ++i) {
      Tensor a(s, std::vector<float>(states.data().begin() + i * n, states.data().begin() + (i + 1) * n));
      Tensor b(s, std::vector<float>(next.data().begin() + i * n, next.data().begin() + (i + 1) * n));
      buf.push({std::move(a), std::stoull(actions[i]), rewards[i], std::move(b), terminal[i] == '1'});
    }
  }

  GreedyPolicy greedy() const override {
    auto params = std::make_shared<ParamMap<float>>(agent_.store().entries());
    Network net = agent_.network();
    return [params, net](const Environment&, const Tensor& obs) { return argmax(q_values(net, *params, obs)); };
  }

  std::uint64_t global_steps() const override { return agent_.steps(); }

 private:
  static DqnAgent make_agent(const TrainConfig& cfg) {
    auto env = make_env(cfg.env_spec());
    ParamStore<float> store;
    Rng rng = derive_rng(cfg.count("seed"), init_stream);
    Network net = build_network(variant_for(cfg), arch_for(cfg, *env), store, rng);
    DqnConfig d;
    d.gamma = cfg.real("dqn.gamma");
    d.batch_size = cfg.count("dqn.batch_size", 1);
    d.epsilon_start = cfg.real("dqn.epsilon_start");
    d.epsilon_end = cfg.real("dqn.epsilon_end");
    d.epsilon_decay_steps = cfg.count("dqn.epsilon_decay_steps", 1);
    d.learn_start = cfg.count("dqn.learn_start", 1);
    d.buffer_capacity = cfg.count("dqn.buffer_capacity", 1);
    d.seed = cfg.count("seed");
    AdamState<float> opt;
    opt.learning_rate = static_cast<float>(cfg.real("lr"));
    return DqnAgent(std::move(net), std::move(store), d, std::move(env), std::move(opt));
  }

  DqnAgent agent_;
};

class A3cTrainer final : public Trainer {
 public:
  explicit A3cTrainer(const TrainConfig& cfg) : spec_(cfg.env_spec()) {
    auto env = make_env(spec_);
    ParamStore<float> store;
    Rng rng = derive_rng(cfg.count("seed"), init_stream);
    net_ = build_network(variant_for(cfg), arch_for(cfg, *env), store, rng);
    AdamState<float> opt;
    opt.learning_rate = static_cast<float>(cfg.real("lr"));
    store_ = std::make_unique<SharedParamStore<float>>(std::move(store), std::move(opt));
    a3c_.variant = net_.variant;
    a3c_.gamma = cfg.real("a3c.gamma");
    a3c_.t_max = cfg.count("a3c.tmax", 1);
    a3c_.worker_count = cfg.count("a3c.workers", 1);
    a3c_.entropy_beta = cfg.real("a3c.entropy_beta");
    a3c_.deterministic = cfg.boolean("a3c.deterministic");
    a3c_.forced_head = static_cast<int>(cfg.count("a3c.forced_head"));
    a3c_.bootstrap_same_head = cfg.boolean("a3c.bootstrap_same_head");
    a3c_.seed = cfg.count("seed");
    a3c_.validate();
    run_ = make_run(a3c_, spec_);
  }

  void train(std::uint64_t total, EpochTracker& tracker, const Stopwatch& clock, const EpochSink& sink) override {
    A3cConfig cfg = a3c_;
    cfg.total_steps = total;
    run_training(cfg, *store_, net_, run_, [&](const IterationReport& rep) {
      if (rep.chosen_head) ++head_counts_[rep.chosen_head - 1];
      for (const auto& r : track(tracker, rep, clock.seconds()))
        if (sink) sink(r);
    }, &stop_);
  }

  void save(Checkpoint& ck) const override {
    store_->with_lock([&](const ParamStore<float>& s, const AdamState<float>& opt) {
      add_params(ck, s);
      add_optimizer(ck, opt);
    });
    ck.set("global_step", std::to_string(run_.global_steps));
    ck.set("a3c.next_worker", std::to_string(run_.next_worker));
    for (const auto& w : run_.workers) {
      const std::string p = "worker." + std::to_string(w.id) + ".";
      ck.set(p + "env", w.env->save_state());
      ck.set(p + "rng", rng_state(w.rng));
      ck.set(p + "head_rng", rng_state(w.head_rng));
      ck.set(p + "progress", exact_str(w.episode_reward) + ' ' + std::to_string(w.local_steps));
      if (!w.env->needs_reset()) ck.add_tensor(p + "obs", w.obs);
    }
  }

  void load(const Checkpoint& ck) override {
    store_->with_lock([&](ParamStore<float>& s, AdamState<float>& opt) {
      load_params(ck, s);
      load_optimizer(ck, opt);
    });
    run_.global_steps = std::stoull(ck.get("global_step"));
    run_.next_worker = std::stoull(ck.get("a3c.next_worker"));
    for (auto& w : run_.workers) {
      const std::string p = "worker." + std::to_string(w.id) + ".";
      if (!ck.has(p + "env")) throw ConfigError("checkpoint has no state for worker " + std::to_string(w.id));
      w.env->load_state(ck.get(p + "env"));
      restore_rng(w.rng, ck.get(p + "rng"));
      restore_rng(w.head_rng, ck.get(p + "head_rng"));
      const auto prog = split_ws(ck.get(p + "progress"));
      w.episode_reward = parse_exact(prog.at(0));
      w.local_steps = std::stoull(prog.at(1));
      if (const Tensor* obs = ck.find_tensor(p + "obs")) w.obs = *obs;
    }
  }

  GreedyPolicy greedy() const override {
    auto params = std::make_shared<ParamMap<float>>(store_->snapshot().params);
    Network net = net_;
    return [params, net](const Environment&, const Tensor& obs) { return argmax(*forward(net, *params, obs).policy); };
  }

  std::uint64_t global_steps() const override { return run_.global_steps; }
  const SharedParamStore<float>& store() const { return *store_; }
  const Network& network() const { return net_; }
  const A3cRun& run() const { return run_; }
  std::array<std::uint64_t, 2> head_counts() const { return head_counts_; }

 private:
  EnvSpec spec_;
  Network net_;
  std::unique_ptr<SharedParamStore<float>> store_;
  A3cConfig a3c_;
  A3cRun run_;
  std::array<std::uint64_t, 2> head_counts_{0, 0};
};

inline std::unique_ptr<Trainer> make_trainer(const TrainConfig& cfg) {
  if (cfg.is_tabular()) return std::make_unique<TabularTrainer>(cfg);
  if (cfg.is_dqn()) return std::make_unique<DqnTrainer>(cfg);
  return std::make_unique<A3cTrainer>(cfg);
}

inline constexpr const char* metrics_file = "metrics.csv";
inline constexpr const char* checkpoint_file = "checkpoint.a3cf";
inline constexpr const char* config_file = "config.txt";

/// Full training state as a checkpoint: trainer state plus config, epoch
/// bookkeeping, and elapsed wall time.
inline Checkpoint make_checkpoint(const TrainConfig& cfg, const Trainer& trainer, const EpochTracker& tracker,
                                  double wall_time_s) {
  Checkpoint ck;
  ck.set("algo", cfg.algo());
  ck.set("env", cfg.str("env"));
  ck.set("config", cfg.render());
  ck.set("tracker", tracker.save_state());
  ck.set("wall_time_s", exact_str(wall_time_s));
  trainer.save(ck);
  return ck;
}

struct TrainOptions {
  std::optional<std::string> resume_from;
};

/// Exit status: 0 ok, 2 invalid configuration, 1 training failure.
inline int run_train(const ConfigMap& raw, const TrainOptions& opts = {}, std::ostream& err = std::cerr) {
  TrainConfig cfg;
  std::unique_ptr<Trainer> trainer;
  try {
    cfg = resolve_config(raw);
    trainer = make_trainer(cfg);
  } catch (const ConfigError& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return 2;
  }
  try {
    const std::filesystem::path dir(cfg.str("output_dir"));
    std::filesystem::create_directories(dir);
    {
      std::ofstream c(dir / config_file, std::ios::trunc);
      c << cfg.render();
      if (!c) throw Error("cannot write " + (dir / config_file).string());
    }
    EpochTracker tracker(cfg.count("steps_per_epoch", 1));
    double wall_offset = 0;
    std::optional<std::uint64_t> keep_rows;
    if (opts.resume_from) {
      const Checkpoint ck = load_checkpoint(*opts.resume_from);
      if (ck.get("algo") != cfg.algo() || ck.get("env") != cfg.str("env")) {
        err << "checkpoint was written by " << ck.get("algo") << " on " << ck.get("env") << ", config asks for "
            << cfg.algo() << " on " << cfg.str("env") << '\n';
        return 2;
      }
      trainer->load(ck);
      tracker.load_state(ck.get("tracker"));
      wall_offset = parse_exact(ck.get("wall_time_s"));
      keep_rows = tracker.completed_epochs();
    }
    MetricsWriter metrics((dir / metrics_file).string(), keep_rows);
    Stopwatch clock(wall_offset);
    const std::uint64_t total = cfg.total_steps();
    if (total > 0) {
      trainer->train(total, tracker, clock, [&](const EpochRecord& r) { metrics.write(r); });
    }
    save_checkpoint(make_checkpoint(cfg, *trainer, tracker, clock.seconds()), (dir / checkpoint_file).string());
  } catch (const ConfigError& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "training aborted: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

/// Rebuilds the trainer recorded in a checkpoint.
inline std::unique_ptr<Trainer> trainer_from_checkpoint(const Checkpoint& ck, TrainConfig* cfg_out = nullptr) {
  const TrainConfig cfg = resolve_config(parse_config_text(ck.get("config")));
  auto trainer = make_trainer(cfg);
  trainer->load(ck);
  if (cfg_out) *cfg_out = cfg;
  return trainer;
}

/// Greedy evaluation of a checkpoint on its own env (seeded with `seed`).
inline EvalResult run_eval(const std::string& checkpoint_path, std::size_t episodes, std::uint64_t seed,
                           const std::optional<std::string>& expect_env = std::nullopt) {
  if (episodes == 0) throw UsageError("evaluation needs at least one episode");
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  TrainConfig cfg;
  auto trainer = trainer_from_checkpoint(ck, &cfg);
  if (expect_env && *expect_env != cfg.str("env")) {
    throw ConfigError("checkpoint env is " + cfg.str("env") + ", not " + *expect_env);
  }
  EnvSpec spec = cfg.env_spec();
  spec.seed = seed;
  return evaluate_policy(spec, trainer->greedy(), episodes);
}

}  // namespace drl
