// Acceptance checks. Run as `drl_acceptance N` for one criterion (1..10) or
// with no argument for all of them; prints one PASS/FAIL line per criterion.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "drl/a3c.hpp"
#include "drl/gradcheck_suite.hpp"
#include "drl/harness/plot.hpp"
#include "drl/harness/train.hpp"
#include "drl/tabular.hpp"

using namespace drl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "drl_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> rows_without_wall_time(const fs::path& csv) {
  std::vector<std::string> out;
  std::istringstream is(slurp(csv));
  for (std::string l; std::getline(is, l);) {
    const auto a = l.find(','), b = l.find(',', a + 1), c = l.find(',', b + 1);
    out.push_back(l.substr(0, b) + l.substr(c));
  }
  return out;
}

Verdict gradient_fidelity() {
  Stopwatch clock;
  double worst = 0;
  std::string worst_name;
  for (const auto& r : run_gradcheck_suite()) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const double t = clock.seconds();
  return {worst < 1e-4 && t < 120,
          fmt("max rel err %.3e (%s), %.1fs", worst, worst_name.c_str(), t)};
}

Verdict tabular_oracle() {
  Stopwatch clock;
  const EnvSpec spec{EnvId::gridworld4x4, 0, {}};
  const auto qstar = optimal_q_values(spec, 0.9);
  bool all = true;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto env = make_env({EnvId::gridworld4x4, seed, {}});
    TabularLearner learner(TabularAlgo::q_learning, {0.1, 0.9, 0.1, seed}, env->num_states(), env->action_count());
    learner.run_steps(*env, 200000);
    double err = 0;
    for (std::size_t s = 0; s < qstar.size(); ++s) {
      if (env->is_terminal_state(s)) continue;
      for (std::size_t a = 0; a < qstar[s].size(); ++a) err = std::max(err, std::abs(learner.q().at(s, a) - qstar[s][a]));
    }
    all = all && err < 0.05;
    per_seed += fmt(" %.3f", err);
  }
  const double t = clock.seconds();
  return {all && t < 60, "max|Q-Q*| per seed:" + per_seed + fmt(", %.1fs", t)};
}

Verdict bias_separation() {
  Stopwatch clock;
  const std::size_t seeds = 100;
  BiasConfig bc;
  bc.k = 8;
  bc.gamma = 0.95;
  bc.episodes = 10000;
  double q_est = 0, d_est = 0;
  std::size_t q_left = 0, d_right = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto q = run_bias_seed(TabularAlgo::q_learning, s, bc);
    const auto d = run_bias_seed(TabularAlgo::double_q, s, bc);
    q_est += q.estimate_b / seeds;
    d_est += d.estimate_b / seeds;
    q_left += q.greedy_left;
    d_right += !d.greedy_left;
  }
  const double t = clock.seconds();
  const bool separation = q_est - d_est > 0.1;
  const bool double_right = d_right > 80;
  const bool q_greedy_left = q_left > 50;
  return {separation && double_right && q_greedy_left && t < 300,
          fmt("estimate Q %+.4f vs Double %+.4f (gap %.4f%s); Double right %zu%%%s; Q left %zu%%%s; %.1fs", q_est,
              d_est, q_est - d_est, separation ? "" : " FAIL", d_right, double_right ? "" : " FAIL", q_left,
              q_greedy_left ? "" : " FAIL", t)};
}

// Trains epoch by epoch and evaluates 100 greedy episodes after each one.
Verdict converge(const ConfigMap& raw, std::uint64_t budget, double wall_limit_s) {
  Stopwatch clock;
  const TrainConfig cfg = resolve_config(raw);
  auto trainer = make_trainer(cfg);
  const std::uint64_t spe = cfg.count("steps_per_epoch", 1);
  EpochTracker tracker(spe);
  EnvSpec eval_spec = cfg.env_spec();
  eval_spec.seed += 104729;
  double last = -1;
  for (std::uint64_t epoch = 1; epoch * spe <= budget; ++epoch) {
    trainer->train(epoch * spe, tracker, clock, {});
    last = evaluate_policy(eval_spec, trainer->greedy(), 100).mean;
    if (last >= 0.9) {
      const double t = clock.seconds();
      return {t < wall_limit_s,
              fmt("eval %.3f after %llu global steps, %.1fs", last,
                  static_cast<unsigned long long>(trainer->global_steps()), t)};
    }
  }
  return {false, fmt("best eval below 0.9 (last %.3f) within %llu steps", last, static_cast<unsigned long long>(budget))};
}

ConfigMap a3c_catch(const std::string& algo) {
  return {{"algo", algo}, {"env", "catch"}, {"seed", "1"}, {"a3c.workers", "3"}, {"a3c.tmax", "5"}, {"a3c.gamma", "0.99"}};
}

Verdict a3c_convergence() { return converge(a3c_catch("a3c"), 200000, 900); }

Verdict double_parity() {
  const auto d = converge(a3c_catch("double-a3c"), 300000, 900);
  const auto ls = converge(a3c_catch("ls-double-a3c"), 300000, 900);
  return {d.pass && ls.pass, "double-a3c: " + d.detail + "; ls-double-a3c: " + ls.detail};
}

Verdict dqn_convergence() {
  return converge({{"algo", "dqn"}, {"env", "catch"}, {"seed", "1"}}, 300000, 900);
}

Verdict reduction() {
  const EnvSpec spec{EnvId::catch_game, 3, {}};
  struct Run {
    ParamStore<float> store;
    Network net;
    std::vector<double> trace;
  };
  auto run = [&](ArchVariant v, bool forced) {
    Run r;
    Rng rng(4);
    r.net = build_network(v, desk_arch({1, 5, 5}, 3), r.store, rng);
    A3cConfig cfg;
    cfg.variant = v;
    cfg.worker_count = 1;
    cfg.total_steps = 10000;
    cfg.deterministic = true;
    cfg.seed = 5;
    if (forced) {
      cfg.forced_head = 1;
      cfg.bootstrap_same_head = true;
    }
    SharedParamStore<float> shared(r.store, {});
    auto state = make_run(cfg, spec);
    run_training(cfg, shared, r.net, state, [&](const IterationReport& rep) {
      r.trace.push_back(static_cast<double>(rep.length));
      r.trace.push_back(rep.losses.policy);
      r.trace.push_back(rep.losses.value);
      r.trace.push_back(rep.episode_reward.value_or(-9));
    });
    r.trace.push_back(static_cast<double>(state.global_steps));
    shared.with_lock([&](const ParamStore<float>& st, const AdamState<float>&) { r.store = st; });
    return r;
  };
  const auto van = run(ArchVariant::vanilla_a3c, false);
  const auto dbl = run(ArchVariant::double_a3c, true);
  bool same_trace = van.trace.size() == dbl.trace.size() &&
                    std::memcmp(van.trace.data(), dbl.trace.data(), van.trace.size() * sizeof(double)) == 0;
  std::size_t compared = 0, differing = 0;
  for (const auto& [name, t] : van.store.entries()) {
    const std::string other = name.rfind("v.", 0) == 0 ? "v1." + name.substr(2) : name;
    const auto& u = dbl.store.get(other);
    ++compared;
    if (u.shape() != t.shape() || std::memcmp(u.storage().data(), t.storage().data(), 4 * t.size()) != 0) ++differing;
  }
  return {same_trace && differing == 0,
          fmt("%zu iteration records %s, %zu/%zu parameter tensors bit-identical", van.trace.size() / 4,
              same_trace ? "identical" : "DIFFER", compared - differing, compared)};
}

Verdict paper_shapes() {
  Stopwatch clock;
  bool ok = true;
  std::string detail;
  for (auto v : {ArchVariant::vanilla_a3c, ArchVariant::double_a3c, ArchVariant::ls_double_a3c}) {
    ParamStore<float> store;
    Rng rng(11);
    const Network net = build_network(v, paper_arch(6), store, rng);
    std::size_t convs = 0, pools = 0, fc512 = 0;
    auto count = [&](const Stack& st) {
      for (const auto& s : st) {
        if (std::holds_alternative<Conv2d>(s.spec)) ++convs;
        if (std::holds_alternative<MaxPool2d>(s.spec)) ++pools;
        if (const auto* fc = std::get_if<FullyConnected>(&s.spec); fc && fc->out_dim == 512) ++fc512;
      }
    };
    count(net.trunk);
    if (!net.branches.empty()) count(net.branches[0]);
    Tensor obs(paper_input_shape());
    for (auto& x : obs.storage()) x = static_cast<float>(uniform01(rng));
    const auto out = forward(net, store.entries(), obs);
    double sum = 0;
    for (float p : *out.policy) sum += p;
    const std::size_t heads = out.values.size();
    const bool good = convs == 4 && pools == 3 && fc512 == 1 && std::abs(sum - 1) < 1e-6 &&
                      out.policy->size() == 6 && heads == (is_double(v) ? 2u : 1u);
    ok = ok && good;
    detail += fmt("%s: %zu conv, %zu pool, %zu fc512, %zu value heads, sum(pi)-1 = %.1e; ", to_string(v), convs,
                  pools, fc512, heads, sum - 1);
  }
  const double t = clock.seconds();
  return {ok && t < 10, detail + fmt("%.2fs", t)};
}

Verdict asynchrony() {
  const EnvSpec spec{EnvId::catch_game, 3, {}};
  ParamStore<float> store;
  Rng rng(2);
  const Network net = build_network(ArchVariant::double_a3c, desk_arch({1, 5, 5}, 3), store, rng);
  A3cConfig cfg;
  cfg.variant = ArchVariant::double_a3c;
  cfg.worker_count = 3;
  cfg.total_steps = 60000;
  cfg.seed = 9;
  SharedParamStore<float> shared(store, {});
  auto state = make_run(cfg, spec);
  std::uint64_t lengths = 0, segments = 0, head1 = 0, max_version = 0;
  run_training(cfg, shared, net, state, [&](const IterationReport& r) {
    lengths += r.length;
    ++segments;
    head1 += r.chosen_head == 1;
    max_version = std::max(max_version, r.version);
  });
  const double freq = static_cast<double>(head1) / static_cast<double>(segments);
  const bool ok = segments >= 10000 && freq >= 0.48 && freq <= 0.52 && state.global_steps == lengths &&
                  shared.version() == segments && max_version == segments;
  return {ok, fmt("%llu segments, head-1 frequency %.4f, T=%llu sum(lengths)=%llu, version=%llu applies=%llu",
                  static_cast<unsigned long long>(segments), freq, static_cast<unsigned long long>(state.global_steps),
                  static_cast<unsigned long long>(lengths), static_cast<unsigned long long>(shared.version()),
                  static_cast<unsigned long long>(segments))};
}

Verdict infrastructure() {
  std::string detail;
  bool ok = true;
  auto note = [&](const char* what, bool pass) {
    ok = ok && pass;
    detail += fmt("%s %s; ", what, pass ? "ok" : "FAILED");
  };
  ConfigMap base{{"algo", "double-a3c"}, {"env", "catch"}, {"a3c.deterministic", "true"}, {"seed", "8"},
                 {"steps_per_epoch", "3000"}};

  // Round trip: decode then re-encode reproduces the file byte for byte.
  const auto one = scratch("one");
  auto c1 = base;
  c1["epochs"] = "1";
  c1["output_dir"] = one.string();
  const bool trained = run_train(c1) == 0;
  const auto bytes = slurp(one / checkpoint_file);
  const auto ck = load_checkpoint((one / checkpoint_file).string());
  const auto again = encode_checkpoint(ck);
  note("round trip", trained && std::string(again.begin(), again.end()) == bytes);

  // Resume: 1 epoch + resume to 2 equals a straight 2-epoch run.
  const auto whole = scratch("whole"), resumed = scratch("resumed");
  auto cw = base;
  cw["epochs"] = "2";
  cw["output_dir"] = whole.string();
  auto cr = cw;
  cr["output_dir"] = resumed.string();
  bool resume_ok = run_train(cw) == 0 && run_train(cr, {(one / checkpoint_file).string()}) == 0;
  if (resume_ok) {
    const auto a = load_checkpoint((whole / checkpoint_file).string());
    const auto b = load_checkpoint((resumed / checkpoint_file).string());
    for (const auto& [name, t] : a.tensors) {
      const auto* u = b.find_tensor(name);
      resume_ok = resume_ok && u && u->shape() == t.shape() &&
                  std::memcmp(u->storage().data(), t.storage().data(), 4 * t.size()) == 0;
    }
    resume_ok = resume_ok && a.tensors.size() == b.tensors.size() && a.get("tracker") == b.get("tracker");
    const auto rw = rows_without_wall_time(whole / metrics_file);
    const auto rr = rows_without_wall_time(resumed / metrics_file);
    resume_ok = resume_ok && rw.size() == 3 && rr.size() == 2 && rw[2] == rr[1];
  }
  note("resume", resume_ok);

  // Determinism: a second identical run gives the same metrics.
  const auto twin = scratch("twin");
  auto ct = cw;
  ct["output_dir"] = twin.string();
  note("determinism", run_train(ct) == 0 &&
                          rows_without_wall_time(twin / metrics_file) == rows_without_wall_time(whole / metrics_file));

  // Plot overlay from two runs.
  const auto svg_path = scratch("plot") / "overlay.svg";
  bool plot_ok = true;
  try {
    emit_plot({(whole / metrics_file).string(), (one / metrics_file).string()}, svg_path.string(), XAxis::epoch);
    const auto svg = slurp(svg_path);
    std::size_t polylines = 0;
    for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
    plot_ok = svg.rfind("<svg", 0) == 0 && svg.find("</svg>") != std::string::npos && polylines == 2 &&
              svg.find(">whole</text>") != std::string::npos && svg.find(">one</text>") != std::string::npos;
  } catch (const std::exception&) {
    plot_ok = false;
  }
  note("plot overlay", plot_ok);
  return {ok, detail};
}

const std::map<int, std::pair<const char*, std::function<Verdict()>>> criteria{
    {1, {"gradient fidelity", gradient_fidelity}},
    {2, {"tabular oracle equivalence", tabular_oracle}},
    {3, {"overestimation bias separation", bias_separation}},
    {4, {"a3c convergence on catch", a3c_convergence}},
    {5, {"double / ls-double a3c parity on catch", double_parity}},
    {6, {"dqn convergence on catch", dqn_convergence}},
    {7, {"reduction to vanilla a3c", reduction}},
    {8, {"paper-scale architectures", paper_shapes}},
    {9, {"asynchrony bookkeeping", asynchrony}},
    {10, {"infrastructure", infrastructure}},
};

bool report(int n) {
  const auto& [name, check] = criteria.at(n);
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  std::printf("criterion %2d %s: %s (%s)\n", n, v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
  std::fflush(stdout);
  return v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 2) {
    std::fprintf(stderr, "usage: %s [criterion 1-10]\n", argv[0]);
    return 2;
  }
  bool ok = true;
  if (argc == 2) {
    const int n = std::atoi(argv[1]);
    if (!criteria.count(n)) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[1]);
      return 2;
    }
    ok = report(n);
  } else {
    for (const auto& [n, _] : criteria) ok = report(n) && ok;
  }
  return ok ? 0 : 1;
}
