#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drl/epoch.hpp"
#include "drl/error.hpp"

namespace drl {

inline constexpr const char* metrics_header =
    "epoch,global_steps,wall_time_s,mean_episode_reward,episodes,mean_policy_loss,mean_value_loss";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string metrics_row(const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  std::ostringstream os;
  os << r.epoch << ',' << r.global_steps << ',' << format_real(r.wall_time_s) << ',' << opt(r.mean_episode_reward)
     << ',' << r.episodes << ',' << opt(r.mean_policy_loss) << ',' << opt(r.mean_value_loss);
  return os.str();
}

/// Appends one row per record, flushing each so partial runs stay readable.
class MetricsWriter {
 public:
  // With keep_through set, rows of an existing file up to that epoch are kept
  // (continuing a resumed run in place); otherwise the file starts fresh.
  explicit MetricsWriter(const std::string& path, std::optional<std::uint64_t> keep_through = {}) : path_(path) {
    std::vector<std::string> kept;
    if (keep_through) {
      std::ifstream in(path);
      std::string line;
      if (std::getline(in, line) && line == metrics_header) {
        while (std::getline(in, line)) {
          const auto comma = line.find(',');
          std::uint64_t epoch = 0;
          const auto [end, ec] = std::from_chars(line.data(), line.data() + comma, epoch);
          if (comma == std::string::npos || ec != std::errc{} || epoch > *keep_through) break;
          kept.push_back(line);
        }
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw Error("cannot open " + path + " for writing");
    out_ << metrics_header << '\n';
    for (const auto& l : kept) out_ << l << '\n';
    flush();
  }

  void write(const EpochRecord& r) {
    out_ << metrics_row(r) << '\n';
    flush();
  }

 private:
  void flush() {
    out_.flush();
    if (!out_) throw Error("write failed on " + path_);
  }

  std::string path_;
  std::ofstream out_;
};

struct MetricsRow {
  double epoch = 0;
  double global_steps = 0;
  double wall_time_s = 0;
  std::optional<double> mean_episode_reward;
};

/// Reads the columns needed for plotting. Errors name the offending line.
inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw InsufficientDataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_header) throw UsageError(path + ":1: unexpected header");
  std::vector<MetricsRow> rows;
  for (int n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    auto num = [&](std::size_t i) {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(f[i], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != f[i].size()) {
        throw UsageError(path + ":" + std::to_string(n) + ": bad value '" + f[i] + "'");
      }
      return v;
    };
    if (f.size() != 7) throw UsageError(path + ":" + std::to_string(n) + ": expected 7 fields");
    MetricsRow r;
    r.epoch = num(0);
    r.global_steps = num(1);
    r.wall_time_s = num(2);
    if (!f[3].empty()) r.mean_episode_reward = num(3);
    rows.push_back(r);
  }
  if (rows.empty()) throw InsufficientDataError(path + ": no data rows");
  return rows;
}

}  // namespace drl
