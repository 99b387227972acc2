#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "drl/env.hpp"
#include "drl/error.hpp"
#include "drl/network.hpp"

namespace drl {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const ConfigMap& config_defaults() {
  static const ConfigMap d{
      {"algo", "a3c"},
      {"env", "catch"},
      {"seed", "0"},
      {"epochs", "10"},
      {"steps_per_epoch", "6000"},
      {"eval_episodes", "100"},
      {"output_dir", "runs/default"},
      {"lr", "0.001"},
      {"arch.hidden", "32"},
      {"arch.conv_channels", "8"},
      {"tabular.alpha", "0.1"},
      {"tabular.gamma", "0.9"},
      {"tabular.epsilon", "0.1"},
      {"tabular.init_bound", "0"},
      {"dqn.gamma", "0.99"},
      {"dqn.buffer_capacity", "10000"},
      {"dqn.batch_size", "32"},
      {"dqn.epsilon_start", "1"},
      {"dqn.epsilon_end", "0.1"},
      {"dqn.epsilon_decay_steps", "10000"},
      {"dqn.learn_start", "500"},
      {"a3c.gamma", "0.99"},
      {"a3c.tmax", "5"},
      {"a3c.workers", "3"},
      {"a3c.entropy_beta", "0"},
      {"a3c.deterministic", "false"},
      {"a3c.forced_head", "0"},
      {"a3c.bootstrap_same_head", "false"},
  };
  return d;
}

}  // namespace detail

inline const char* const known_algos[] = {"q-learning", "double-q", "dqn", "dueling-dqn",
                                          "a3c", "double-a3c", "ls-double-a3c"};

/// Parses `key = value` lines; `#` starts a comment.
inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// A fully defaulted, validated configuration.
class TrainConfig {
 public:
  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key " + key);
    return it->second;
  }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
    return v;
  }

  std::uint64_t count(const std::string& key, long long min = 0) const {
    const long long v = integer(key);
    if (v < min) throw ConfigError(key + " must be >= " + std::to_string(min));
    return static_cast<std::uint64_t>(v);
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  const std::string& algo() const { return str("algo"); }
  bool is_tabular() const { return algo() == "q-learning" || algo() == "double-q"; }
  bool is_dqn() const { return algo() == "dqn" || algo() == "dueling-dqn"; }
  bool is_a3c() const { return !is_tabular() && !is_dqn(); }

  EnvSpec env_spec() const {
    EnvSpec spec;
    spec.id = parse_env_id(str("env"));
    spec.seed = count("seed");
    const std::string prefix = std::string(to_string(spec.id)) + ".";
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) spec.params[k.substr(prefix.size())] = v;
    return spec;
  }

  std::uint64_t total_steps() const { return count("epochs") * count("steps_per_epoch", 1); }

  const ConfigMap& values() const { return values_; }

  /// Canonical `key = value` text; reading it back resolves to itself.
  std::string render() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  friend TrainConfig resolve_config(const ConfigMap& raw);

 private:
  ConfigMap values_;
};

/// Applies defaults (including the chosen env's parameters), rejects
/// unknown keys, and type-checks every value.
inline TrainConfig resolve_config(const ConfigMap& raw) {
  TrainConfig cfg;
  cfg.values_ = detail::config_defaults();
  if (auto it = raw.find("env"); it != raw.end()) cfg.values_["env"] = it->second;
  const EnvId env = parse_env_id(cfg.values_["env"]);
  const std::string prefix = std::string(to_string(env)) + ".";
  EnvSpec probe{env, 0, {}};
  for (const auto& [k, v] : raw) {
    if (k.rfind(prefix, 0) == 0) probe.params[k.substr(prefix.size())] = v;
  }
  for (const auto& [k, v] : resolved_env_params(probe)) cfg.values_[prefix + k] = v;
  for (const auto& [k, v] : raw) {
    if (!cfg.values_.count(k)) throw ConfigError("unknown config key " + k);
    cfg.values_[k] = v;
  }

  bool algo_ok = false;
  for (const char* a : known_algos) algo_ok = algo_ok || cfg.algo() == a;
  if (!algo_ok) throw ConfigError("unknown algo '" + cfg.algo() + "'");
  cfg.count("seed");
  cfg.count("epochs");
  cfg.count("steps_per_epoch", 1);
  cfg.count("eval_episodes", 1);
  if (cfg.str("output_dir").empty()) throw ConfigError("output_dir must be non-empty");
  if (cfg.real("lr") <= 0) throw ConfigError("lr must be positive");
  cfg.count("arch.hidden", 1);
  cfg.count("arch.conv_channels");
  for (const char* k : {"tabular.alpha", "tabular.gamma", "tabular.epsilon", "tabular.init_bound", "dqn.gamma",
                        "dqn.epsilon_start", "dqn.epsilon_end", "a3c.gamma", "a3c.entropy_beta"}) {
    cfg.real(k);
  }
  for (const char* k : {"dqn.buffer_capacity", "dqn.batch_size", "dqn.epsilon_decay_steps", "dqn.learn_start",
                        "a3c.tmax", "a3c.workers"}) {
    cfg.count(k, 1);
  }
  cfg.count("a3c.forced_head");
  cfg.boolean("a3c.deterministic");
  cfg.boolean("a3c.bootstrap_same_head");
  make_env(cfg.env_spec());  // env parameter values
  return cfg;
}

}  // namespace drl
