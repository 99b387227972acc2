#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drl/error.hpp"
#include "drl/text.hpp"

namespace drl {

inline constexpr std::uint64_t default_steps_per_epoch = 6000;

struct EpochRecord {
  std::uint64_t epoch = 0;
  std::uint64_t global_steps = 0;
  double wall_time_s = 0;
  std::optional<double> mean_episode_reward;  // absent when no episode ended
  std::uint64_t episodes = 0;
  std::optional<double> mean_policy_loss;
  std::optional<double> mean_value_loss;
};

/// Monotonic seconds since construction plus a carried-over offset, so a
/// resumed run continues the time axis of the one it came from.
class Stopwatch {
 public:
  explicit Stopwatch(double offset_s = 0) : offset_(offset_s), start_(Clock::now()) {}
  double seconds() const {
    return offset_ + std::chrono::duration<double>(Clock::now() - start_).count();
  }

 private:
  using Clock = std::chrono::steady_clock;
  double offset_;
  Clock::time_point start_;
};

/// Folds per-episode rewards and per-step losses into epoch records as the
/// global step counter crosses multiples of steps_per_epoch.
class EpochTracker {
 public:
  explicit EpochTracker(std::uint64_t steps_per_epoch = default_steps_per_epoch)
      : steps_per_epoch_(steps_per_epoch) {
    if (steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be positive");
  }

  void add_episode(double reward) {
    reward_sum_ += reward;
    ++episodes_;
  }

  void add_policy_loss(double sum, std::uint64_t count) {
    policy_sum_ += sum;
    policy_n_ += count;
  }

  void add_value_loss(double sum, std::uint64_t count) {
    value_sum_ += sum;
    value_n_ += count;
  }

  /// Emits one record per epoch boundary reached by `global_steps`.
  std::vector<EpochRecord> advance(std::uint64_t global_steps, double wall_time_s) {
    std::vector<EpochRecord> out;
    while (global_steps >= (completed_ + 1) * steps_per_epoch_) {
      ++completed_;
      EpochRecord r;
      r.epoch = completed_;
      r.global_steps = completed_ * steps_per_epoch_;
      r.wall_time_s = wall_time_s;
      r.episodes = episodes_;
      if (episodes_) r.mean_episode_reward = reward_sum_ / episodes_;
      if (policy_n_) r.mean_policy_loss = policy_sum_ / policy_n_;
      if (value_n_) r.mean_value_loss = value_sum_ / value_n_;
      out.push_back(r);
      reward_sum_ = policy_sum_ = value_sum_ = 0;
      episodes_ = policy_n_ = value_n_ = 0;
    }
    return out;
  }

  std::uint64_t completed_epochs() const { return completed_; }
  std::uint64_t steps_per_epoch() const { return steps_per_epoch_; }

  std::string save_state() const {
    std::ostringstream os;
    os << completed_ << ' ' << episodes_ << ' ' << policy_n_ << ' ' << value_n_ << ' '
       << exact_str(reward_sum_) << ' ' << exact_str(policy_sum_) << ' ' << exact_str(value_sum_);
    return os.str();
  }

  void load_state(const std::string& s) {
    const auto tok = split_ws(s);
    if (tok.size() != 7) throw UsageError("malformed epoch tracker state");
    completed_ = std::stoull(tok[0]);
    episodes_ = std::stoull(tok[1]);
    policy_n_ = std::stoull(tok[2]);
    value_n_ = std::stoull(tok[3]);
    reward_sum_ = parse_exact(tok[4]);
    policy_sum_ = parse_exact(tok[5]);
    value_sum_ = parse_exact(tok[6]);
  }

 private:
  std::uint64_t steps_per_epoch_;
  std::uint64_t completed_ = 0;
  std::uint64_t episodes_ = 0, policy_n_ = 0, value_n_ = 0;
  double reward_sum_ = 0, policy_sum_ = 0, value_sum_ = 0;
};

/// Unbounded multi-producer queue with a single consumer.
template <typename M>
class MessageQueue {
 public:
  void push(M m) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(m));
    }
    cv_.notify_one();
  }

  // Blocks until an item arrives or the queue is closed and drained.
  std::optional<M> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    M m = std::move(items_.front());
    items_.pop_front();
    return m;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<M> items_;
  bool closed_ = false;
};

}  // namespace drl
