// Command-line front end: train, eval, plot, bias-experiment, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "drl/gradcheck_suite.hpp"
#include "drl/harness/plot.hpp"
#include "drl/harness/train.hpp"
#include "drl/tabular.hpp"

namespace {

using namespace drl;

struct TrainArgs {
  std::string config_path;
  std::optional<std::string> algo, env, out, resume;
  std::optional<long long> seed, epochs, steps_per_epoch, workers, tmax, total_steps;
  std::optional<double> gamma, lr;
  bool deterministic = false;
  std::vector<std::string> sets;
};

int do_train(const TrainArgs& a) {
  ConfigMap raw;
  try {
    if (!a.config_path.empty()) raw = read_config_file(a.config_path);
    for (const auto& kv : a.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      raw[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  } catch (const ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return 2;
  }
  if (a.algo) raw["algo"] = *a.algo;
  if (a.env) raw["env"] = *a.env;
  if (a.out) raw["output_dir"] = *a.out;
  if (a.seed) raw["seed"] = std::to_string(*a.seed);
  if (a.epochs) raw["epochs"] = std::to_string(*a.epochs);
  if (a.steps_per_epoch) raw["steps_per_epoch"] = std::to_string(*a.steps_per_epoch);
  if (a.workers) raw["a3c.workers"] = std::to_string(*a.workers);
  if (a.tmax) raw["a3c.tmax"] = std::to_string(*a.tmax);
  if (a.lr) raw["lr"] = format_real(*a.lr);
  if (a.deterministic) raw["a3c.deterministic"] = "true";
  if (a.gamma) {
    const std::string algo = raw.count("algo") ? raw["algo"] : "a3c";
    const std::string family = algo == "q-learning" || algo == "double-q" ? "tabular"
                               : algo == "dqn" || algo == "dueling-dqn"   ? "dqn"
                                                                          : "a3c";
    raw[family + ".gamma"] = std::to_string(*a.gamma);
  }
  if (a.total_steps) {
    // Whole epochs covering the requested budget.
    long long per = 6000;
    if (raw.count("steps_per_epoch")) {
      try {
        per = std::stoll(raw["steps_per_epoch"]);
      } catch (const std::exception&) {
        per = 0;
      }
    }
    if (per <= 0 || *a.total_steps < 0) {
      std::cerr << "invalid configuration: --total-steps needs a positive steps_per_epoch\n";
      return 2;
    }
    raw["epochs"] = std::to_string((*a.total_steps + per - 1) / per);
  }
  TrainOptions opts;
  opts.resume_from = a.resume;
  return run_train(raw, opts);
}

int do_bias(std::size_t seeds, BiasConfig bc, const std::string& out_path) {
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::trunc);
    if (!file) {
      std::cerr << "cannot write " << out_path << '\n';
      return 1;
    }
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  out << "seed,algo,episodes,estimate_QBleft,frac_left_chosen\n";
  for (auto algo : {TabularAlgo::q_learning, TabularAlgo::double_q}) {
    double est = 0, left = 0;
    std::size_t greedy_left = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const BiasRun r = run_bias_seed(algo, s, bc);
      out << s << ',' << to_string(algo) << ',' << r.episodes << ',' << format_real(r.estimate_b) << ','
          << format_real(r.frac_left_chosen) << '\n';
      est += r.estimate_b / seeds;
      left += r.frac_left_chosen / seeds;
      greedy_left += r.greedy_left;
    }
    std::fprintf(stderr, "%-10s mean estimate %+.4f  left chosen %.4f  greedy left at A in %zu/%zu seeds\n",
                 to_string(algo), est, left, greedy_left, seeds);
  }
  return 0;
}

int do_gradcheck(int seeds) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(seeds)) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-4s %-70s max rel err %.3e\n", pass ? "ok" : "FAIL", r.name.c_str(), r.max_rel_error);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep RL baselines: tabular Q-learning, DQN, and the A3C family"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train an agent; writes metrics.csv, checkpoint and config snapshot");
  train->add_option("--config", ta.config_path, "key = value config file (flags override it)")->check(CLI::ExistingFile);
  train->add_option("--algo", ta.algo, "q-learning | double-q | dqn | dueling-dqn | a3c | double-a3c | ls-double-a3c");
  train->add_option("--env", ta.env, "gridworld4x4 | overest_mdp | catch");
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--epochs", ta.epochs, "Number of epochs");
  train->add_option("--steps-per-epoch", ta.steps_per_epoch, "Global steps per epoch (default 6000)");
  train->add_option("--total-steps", ta.total_steps, "Step budget, rounded up to whole epochs");
  train->add_option("--workers", ta.workers, "A3C actor-learner count");
  train->add_option("--tmax", ta.tmax, "A3C rollout length");
  train->add_option("--gamma", ta.gamma, "Discount for the selected algorithm");
  train->add_option("--lr", ta.lr, "Adam learning rate");
  train->add_flag("--deterministic", ta.deterministic, "Run A3C workers round-robin on one thread");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--set", ta.sets, "Any config key as key=value (repeatable)");

  std::string ckpt;
  std::size_t episodes = 100;
  std::uint64_t eval_seed = 0;
  std::optional<std::string> eval_env;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  eval->add_option("checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "Evaluation episodes")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Environment seed")->capture_default_str();
  eval->add_option("--env", eval_env, "Fail unless the checkpoint was trained on this env");

  std::vector<std::string> csvs;
  std::string x_axis = "epoch", svg = "plot.svg";
  auto* plot = app.add_subcommand("plot", "SVG learning curves from one or more metrics.csv files");
  plot->add_option("csv", csvs, "metrics.csv files")->required()->check(CLI::ExistingFile);
  plot->add_option("--x", x_axis, "epoch | wall_time")->capture_default_str();
  plot->add_option("--out", svg, "Output SVG path")->capture_default_str();

  std::size_t bias_seeds = 100;
  BiasConfig bc;
  std::string bias_out;
  auto* bias = app.add_subcommand("bias-experiment", "Q-learning vs Double Q-learning on overest_mdp");
  bias->add_option("--seeds", bias_seeds, "Number of seeds")->capture_default_str();
  bias->add_option("--episodes", bc.episodes, "Episodes per seed")->capture_default_str();
  bias->add_option("--k", bc.k, "Actions at B")->capture_default_str();
  bias->add_option("--gamma", bc.gamma, "Discount")->capture_default_str();
  bias->add_option("--epsilon", bc.epsilon, "Exploration rate")->capture_default_str();
  bias->add_option("--mean", bc.mean, "Mean reward at B")->capture_default_str();
  bias->add_option("--stddev", bc.stddev, "Reward stddev at B")->capture_default_str();
  bias->add_option("--out", bias_out, "CSV path (default stdout)");

  int gc_seeds = 3;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and both objectives");
  gradcheck->add_option("--seeds", gc_seeds, "Random instances per case")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return do_train(ta);
    if (*eval) {
      const auto r = run_eval(ckpt, episodes, eval_seed, eval_env);
      std::printf("episodes %zu  mean %.6g  stddev %.6g\n", r.episodes, r.mean, r.stddev);
      return 0;
    }
    if (*plot) {
      emit_plot(csvs, svg, parse_x_axis(x_axis));
      return 0;
    }
    if (*bias) return do_bias(bias_seeds, bc, bias_out);
    if (*gradcheck) return do_gradcheck(gc_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
