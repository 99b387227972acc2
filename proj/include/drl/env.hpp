#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "drl/error.hpp"
#include "drl/random.hpp"
#include "drl/tensor.hpp"

namespace drl {

enum class EnvId { gridworld4x4, overest_mdp, catch_game };

inline const char* to_string(EnvId id) {
  switch (id) {
    case EnvId::gridworld4x4: return "gridworld4x4";
    case EnvId::overest_mdp: return "overest_mdp";
    case EnvId::catch_game: return "catch";
  }
  return "?";
}

inline EnvId parse_env_id(const std::string& s) {
  for (auto id : {EnvId::gridworld4x4, EnvId::overest_mdp, EnvId::catch_game}) {
    if (s == to_string(id)) return id;
  }
  throw ConfigError("unknown env '" + s + "'");
}

struct EnvSpec {
  EnvId id = EnvId::gridworld4x4;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> params;  // keys without the env prefix
};

struct StepResult {
  Tensor observation;
  double reward = 0;
  bool terminal = false;
  // Terminal because of the step cap rather than the dynamics; value-based
  // learners keep bootstrapping through such transitions.
  bool truncated = false;
};

/// One transition outcome of an enumerable model, for exact planning.
struct Outcome {
  double prob = 1;
  double reward = 0;  // expected reward
  std::size_t next = 0;
  bool terminal = false;
};

/// Episodic environment. Single owner; distinct instances are independent.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const Shape& observation_shape() const = 0;
  virtual std::size_t action_count() const = 0;

  Tensor reset() {
    needs_reset_ = false;
    steps_ = 0;
    return do_reset();
  }

  StepResult step(std::size_t action) {
    if (needs_reset_) throw UsageError("step called before reset or after terminal");
    if (action >= action_count()) {
      throw UsageError("action " + std::to_string(action) + " out of range [0, " +
                       std::to_string(action_count()) + ")");
    }
    ++steps_;
    StepResult r = do_step(action);
    if (r.terminal) needs_reset_ = true;
    return r;
  }

  std::size_t episode_steps() const { return steps_; }
  bool needs_reset() const { return needs_reset_; }

  /// Full dynamic state (including rng) as text, for checkpoint/resume.
  std::string save_state() const {
    std::ostringstream os;
    os << needs_reset_ << ' ' << steps_ << ' ';
    save_extra(os);
    return os.str();
  }

  void load_state(const std::string& state) {
    std::istringstream is(state);
    is >> needs_reset_ >> steps_;
    load_extra(is);
    if (!is) throw UsageError("malformed environment state");
  }

  // Enumerable-model interface; the default is "not enumerable".
  virtual bool enumerable() const { return false; }
  virtual std::size_t num_states() const { return 0; }
  virtual std::size_t current_state() const { throw UsageError("environment is not enumerable"); }
  virtual bool is_terminal_state(std::size_t) const { return false; }
  virtual std::vector<Outcome> outcomes(std::size_t, std::size_t) const {
    throw UsageError("environment is not enumerable");
  }

 protected:
  virtual Tensor do_reset() = 0;
  virtual StepResult do_step(std::size_t action) = 0;
  virtual void save_extra(std::ostream& os) const = 0;
  virtual void load_extra(std::istream& is) = 0;

 private:
  bool needs_reset_ = true;
  std::size_t steps_ = 0;
};

// Environment rngs use their own derived stream so that an agent seeded
// with the same integer never shares a random sequence with its env.
inline constexpr std::uint64_t env_stream = 0x656e76;

inline Tensor one_hot(std::size_t n, std::size_t index) {
  Tensor t(Shape{n});
  t[index] = 1.0f;
  return t;
}

/// size x size grid, start (0,0), goal (size-1, size-1). Actions north,
/// south, east, west; off-grid moves leave the agent in place.
class Gridworld final : public Environment {
 public:
  enum Action : std::size_t { north = 0, south = 1, east = 2, west = 3 };

  explicit Gridworld(std::size_t size = 4, std::size_t step_cap = 100)
      : size_(size), step_cap_(step_cap), shape_{size * size} {
    if (size < 2) throw ConfigError("gridworld4x4.size must be at least 2");
    if (step_cap == 0) throw ConfigError("gridworld4x4.step_cap must be positive");
  }

  const Shape& observation_shape() const override { return shape_; }
  std::size_t action_count() const override { return 4; }

  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }
  void place(std::size_t row, std::size_t col) {
    row_ = row;
    col_ = col;
  }

  bool enumerable() const override { return true; }
  std::size_t num_states() const override { return size_ * size_; }
  std::size_t current_state() const override { return row_ * size_ + col_; }
  bool is_terminal_state(std::size_t s) const override { return s == goal(); }
  std::vector<Outcome> outcomes(std::size_t s, std::size_t a) const override {
    const std::size_t next = move(s, a);
    return {{1.0, next == goal() ? 1.0 : 0.0, next, next == goal()}};
  }

 protected:
  Tensor do_reset() override {
    row_ = col_ = 0;
    return one_hot(num_states(), current_state());
  }

  StepResult do_step(std::size_t a) override {
    const std::size_t next = move(current_state(), a);
    row_ = next / size_;
    col_ = next % size_;
    StepResult r{one_hot(num_states(), next), 0.0, false, false};
    if (next == goal()) {
      r.reward = 1.0;
      r.terminal = true;
    } else if (episode_steps() >= step_cap_) {
      r.terminal = true;
      r.truncated = true;
    }
    return r;
  }

  void save_extra(std::ostream& os) const override { os << row_ << ' ' << col_; }
  void load_extra(std::istream& is) override { is >> row_ >> col_; }

 private:
  std::size_t goal() const { return size_ * size_ - 1; }

  std::size_t move(std::size_t s, std::size_t a) const {
    std::size_t r = s / size_, c = s % size_;
    switch (a) {
      case north: if (r > 0) --r; break;
      case south: if (r + 1 < size_) ++r; break;
      case east: if (c + 1 < size_) ++c; break;
      case west: if (c > 0) --c; break;
      default: break;
    }
    return r * size_ + c;
  }

  std::size_t size_, step_cap_;
  Shape shape_;
  std::size_t row_ = 0, col_ = 0;
};

/// Two-state maximization-bias probe. From A, action 0 ("left") moves to B
/// with reward 0 and every other action ("right" and its pads) terminates
/// with reward 0. Every action at B terminates with a Normal(mean, stddev)
/// reward. Observations are one-hot over {A, B, terminal}.
class OverestMdp final : public Environment {
 public:
  static constexpr std::size_t state_a = 0, state_b = 1, state_end = 2;
  static constexpr std::size_t left = 0, right = 1;

  OverestMdp(std::size_t k, double mean, double stddev, std::uint64_t seed)
      : k_(k), mean_(mean), stddev_(stddev), rng_(derive_rng(seed, env_stream)), shape_{3} {
    if (k == 0) throw ConfigError("overest_mdp.k must be positive");
    if (!(stddev >= 0)) throw ConfigError("overest_mdp.stddev must be non-negative");
  }

  const Shape& observation_shape() const override { return shape_; }
  std::size_t action_count() const override { return std::max<std::size_t>(2, k_); }
  std::size_t k() const { return k_; }

  bool enumerable() const override { return true; }
  std::size_t num_states() const override { return 3; }
  std::size_t current_state() const override { return state_; }
  bool is_terminal_state(std::size_t s) const override { return s == state_end; }
  std::vector<Outcome> outcomes(std::size_t s, std::size_t a) const override {
    if (s == state_a) {
      if (a == left) return {{1.0, 0.0, state_b, false}};
      return {{1.0, 0.0, state_end, true}};
    }
    return {{1.0, mean_, state_end, true}};
  }

 protected:
  Tensor do_reset() override {
    state_ = state_a;
    return one_hot(3, state_);
  }

  StepResult do_step(std::size_t a) override {
    if (state_ == state_a && a == left) {
      state_ = state_b;
      return {one_hot(3, state_), 0.0, false, false};
    }
    const double reward = state_ == state_b ? normal(rng_, mean_, stddev_) : 0.0;
    state_ = state_end;
    return {one_hot(3, state_), reward, true, false};
  }

  void save_extra(std::ostream& os) const override { os << state_ << ' ' << rng_state(rng_); }
  void load_extra(std::istream& is) override {
    is >> state_;
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    restore_rng(rng_, rest);
  }

 private:
  std::size_t k_;
  double mean_, stddev_;
  Rng rng_;
  Shape shape_;
  std::size_t state_ = state_a;
};

/// 5x5 single-plane catch. The ball starts in a random top-row column and
/// falls one row per step; the one-pixel paddle starts bottom-center and
/// moves left/stay/right. After 4 steps the ball is on the bottom row and
/// the episode ends with +1 (caught) or -1.
class Catch final : public Environment {
 public:
  static constexpr std::size_t size = 5;
  enum Action : std::size_t { move_left = 0, stay = 1, move_right = 2 };

  explicit Catch(std::uint64_t seed) : rng_(derive_rng(seed, env_stream)), shape_{1, size, size} {}

  const Shape& observation_shape() const override { return shape_; }
  std::size_t action_count() const override { return 3; }

  std::size_t ball_row() const { return ball_row_; }
  std::size_t ball_col() const { return ball_col_; }
  std::size_t paddle_col() const { return paddle_; }

  bool enumerable() const override { return true; }
  std::size_t num_states() const override { return size * size * size; }
  std::size_t current_state() const override { return encode(ball_row_, ball_col_, paddle_); }
  bool is_terminal_state(std::size_t s) const override { return s / (size * size) == size - 1; }
  std::vector<Outcome> outcomes(std::size_t s, std::size_t a) const override {
    const std::size_t row = s / (size * size), ball = (s / size) % size;
    const std::size_t paddle = moved(s % size, a);
    const bool done = row + 1 == size - 1;
    const double reward = done ? (paddle == ball ? 1.0 : -1.0) : 0.0;
    return {{1.0, reward, encode(row + 1, ball, paddle), done}};
  }

  Tensor observe() const {
    Tensor t(shape_);
    t.at3(0, ball_row_, ball_col_) = 1.0f;
    t.at3(0, size - 1, paddle_) = 1.0f;
    return t;
  }

 protected:
  Tensor do_reset() override {
    ball_row_ = 0;
    ball_col_ = uniform_index(rng_, size);
    paddle_ = size / 2;
    return observe();
  }

  StepResult do_step(std::size_t a) override {
    paddle_ = moved(paddle_, a);
    ++ball_row_;
    StepResult r{observe(), 0.0, false, false};
    if (ball_row_ == size - 1) {
      r.terminal = true;
      r.reward = paddle_ == ball_col_ ? 1.0 : -1.0;
    }
    return r;
  }

  void save_extra(std::ostream& os) const override {
    os << ball_row_ << ' ' << ball_col_ << ' ' << paddle_ << ' ' << rng_state(rng_);
  }
  void load_extra(std::istream& is) override {
    is >> ball_row_ >> ball_col_ >> paddle_;
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    restore_rng(rng_, rest);
  }

 private:
  static std::size_t encode(std::size_t row, std::size_t ball, std::size_t paddle) {
    return (row * size + ball) * size + paddle;
  }
  static std::size_t moved(std::size_t paddle, std::size_t a) {
    if (a == move_left && paddle > 0) return paddle - 1;
    if (a == move_right && paddle + 1 < size) return paddle + 1;
    return paddle;
  }

  Rng rng_;
  Shape shape_;
  std::size_t ball_row_ = 0, ball_col_ = 0, paddle_ = size / 2;
};

/// Concatenates the last `frames` [C,H,W] observations along C. Reset fills
/// the history with copies of the first observation.
class FrameStack final : public Environment {
 public:
  FrameStack(std::unique_ptr<Environment> inner, std::size_t frames)
      : inner_(std::move(inner)), frames_(frames) {
    const auto& s = inner_->observation_shape();
    if (s.size() != 3) throw ConfigError("frame stacking needs [C, H, W] observations");
    if (frames == 0) throw ConfigError("frame_stack must be positive");
    shape_ = {s[0] * frames, s[1], s[2]};
  }

  const Shape& observation_shape() const override { return shape_; }
  std::size_t action_count() const override { return inner_->action_count(); }
  Environment& inner() { return *inner_; }

  bool enumerable() const override { return inner_->enumerable(); }
  std::size_t num_states() const override { return inner_->num_states(); }
  std::size_t current_state() const override { return inner_->current_state(); }
  bool is_terminal_state(std::size_t s) const override { return inner_->is_terminal_state(s); }
  std::vector<Outcome> outcomes(std::size_t s, std::size_t a) const override {
    return inner_->outcomes(s, a);
  }

 protected:
  Tensor do_reset() override {
    Tensor first = inner_->reset();
    history_.assign(frames_, first);
    return stacked();
  }

  StepResult do_step(std::size_t a) override {
    StepResult r = inner_->step(a);
    history_.pop_front();
    history_.push_back(r.observation);
    r.observation = stacked();
    return r;
  }

  void save_extra(std::ostream& os) const override {
    const std::string inner = inner_->save_state();
    os << inner.size() << ' ' << inner << ' ' << history_.size();
    for (const auto& f : history_)
      for (float v : f.storage()) os << ' ' << v;
  }

  void load_extra(std::istream& is) override {
    std::size_t len = 0;
    is >> len;
    is.get();
    std::string inner(len, '\0');
    is.read(inner.data(), static_cast<std::streamsize>(len));
    inner_->load_state(inner);
    std::size_t count = 0;
    is >> count;
    history_.assign(count, Tensor(inner_->observation_shape()));
    for (auto& f : history_)
      for (auto& v : f.storage()) is >> v;
  }

 private:
  Tensor stacked() const {
    std::vector<float> data;
    data.reserve(shape_size(shape_));
    for (const auto& f : history_) data.insert(data.end(), f.storage().begin(), f.storage().end());
    return Tensor(shape_, std::move(data));
  }

  std::unique_ptr<Environment> inner_;
  std::size_t frames_;
  Shape shape_;
  std::deque<Tensor> history_;
};

namespace detail {

inline const std::map<std::string, std::string>& env_defaults(EnvId id) {
  static const std::map<std::string, std::string> grid{{"size", "4"}, {"step_cap", "100"}};
  static const std::map<std::string, std::string> over{{"k", "8"}, {"mean", "-0.1"}, {"stddev", "1"}};
  static const std::map<std::string, std::string> cat{{"frame_stack", "1"}};
  switch (id) {
    case EnvId::gridworld4x4: return grid;
    case EnvId::overest_mdp: return over;
    case EnvId::catch_game: return cat;
  }
  return grid;
}

inline long long parse_int_param(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  return out;
}

inline double parse_real_param(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size() || !std::isfinite(out)) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
  return out;
}

}  // namespace detail

/// Env parameters with defaults filled in; unknown keys are rejected.
inline std::map<std::string, std::string> resolved_env_params(const EnvSpec& spec) {
  auto out = detail::env_defaults(spec.id);
  for (const auto& [k, v] : spec.params) {
    if (!out.count(k)) {
      throw ConfigError(std::string("unknown parameter ") + to_string(spec.id) + "." + k);
    }
    out[k] = v;
  }
  return out;
}

inline std::unique_ptr<Environment> make_env(const EnvSpec& spec) {
  const auto p = resolved_env_params(spec);
  const std::string prefix = std::string(to_string(spec.id)) + ".";
  auto integer = [&](const std::string& k, long long lo) {
    const long long v = detail::parse_int_param(prefix + k, p.at(k));
    if (v < lo) throw ConfigError(prefix + k + " must be >= " + std::to_string(lo));
    return static_cast<std::size_t>(v);
  };
  switch (spec.id) {
    case EnvId::gridworld4x4:
      return std::make_unique<Gridworld>(integer("size", 2), integer("step_cap", 1));
    case EnvId::overest_mdp:
      return std::make_unique<OverestMdp>(integer("k", 1),
                                          detail::parse_real_param(prefix + "mean", p.at("mean")),
                                          detail::parse_real_param(prefix + "stddev", p.at("stddev")),
                                          spec.seed);
    case EnvId::catch_game: {
      const std::size_t frames = integer("frame_stack", 1);
      auto env = std::make_unique<Catch>(spec.seed);
      if (frames == 1) return env;
      return std::make_unique<FrameStack>(std::move(env), frames);
    }
  }
  throw ConfigError("unknown env");
}

/// max_s |V(s) - max_a E[r + gamma V(s')]| over non-terminal states.
inline double bellman_residual(const Environment& env, const std::vector<double>& v, double gamma) {
  double worst = 0;
  for (std::size_t s = 0; s < env.num_states(); ++s) {
    if (env.is_terminal_state(s)) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < env.action_count(); ++a) {
      double q = 0;
      for (const auto& o : env.outcomes(s, a)) {
        q += o.prob * (o.reward + (o.terminal ? 0.0 : gamma * v[o.next]));
      }
      best = std::max(best, q);
    }
    worst = std::max(worst, std::abs(v[s] - best));
  }
  return worst;
}

/// Exact value iteration over the env's enumerable model. Terminal states
/// have value 0; step caps are ignored.
inline std::vector<double> optimal_state_values(const EnvSpec& spec, double gamma) {
  if (!(gamma >= 0 && gamma < 1)) throw ConfigError("value iteration needs gamma in [0, 1)");
  auto env = make_env(spec);
  if (!env->enumerable()) throw UsageError("environment is not enumerable");
  std::vector<double> v(env->num_states(), 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    std::vector<double> next(v.size(), 0.0);
    double delta = 0;
    for (std::size_t s = 0; s < v.size(); ++s) {
      if (env->is_terminal_state(s)) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < env->action_count(); ++a) {
        double q = 0;
        for (const auto& o : env->outcomes(s, a)) {
          q += o.prob * (o.reward + (o.terminal ? 0.0 : gamma * v[o.next]));
        }
        best = std::max(best, q);
      }
      next[s] = best;
      delta = std::max(delta, std::abs(best - v[s]));
    }
    v = std::move(next);
    if (delta == 0 || bellman_residual(*env, v, gamma) < 1e-12) return v;
  }
  throw Error("value iteration did not converge");
}

/// Q*(s, a) from V*; rows are states, terminal rows are zero.
inline std::vector<std::vector<double>> optimal_q_values(const EnvSpec& spec, double gamma) {
  const auto v = optimal_state_values(spec, gamma);
  auto env = make_env(spec);
  std::vector<std::vector<double>> q(v.size(), std::vector<double>(env->action_count(), 0.0));
  for (std::size_t s = 0; s < v.size(); ++s) {
    if (env->is_terminal_state(s)) continue;
    for (std::size_t a = 0; a < env->action_count(); ++a) {
      for (const auto& o : env->outcomes(s, a)) {
        q[s][a] += o.prob * (o.reward + (o.terminal ? 0.0 : gamma * v[o.next]));
      }
    }
  }
  return q;
}

}  // namespace drl
