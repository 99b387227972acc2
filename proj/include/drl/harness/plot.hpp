#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "drl/harness/metrics.hpp"

namespace drl {

enum class XAxis { wall_time, epoch };

inline XAxis parse_x_axis(const std::string& s) {
  if (s == "epoch") return XAxis::epoch;
  if (s == "wall_time" || s == "wall-time" || s == "time") return XAxis::wall_time;
  throw ConfigError("unknown x axis '" + s + "' (use epoch or wall_time)");
}

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string series_label(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.filename() == "metrics.csv" && p.has_parent_path() && !p.parent_path().filename().empty()) {
    return p.parent_path().filename().string();
  }
  return p.stem().string();
}

}  // namespace detail

inline PlotSeries load_series(const std::string& csv, XAxis x) {
  PlotSeries s;
  s.label = detail::series_label(csv);
  for (const auto& r : read_metrics_csv(csv)) {
    if (!r.mean_episode_reward) continue;
    const double xv = x == XAxis::epoch ? r.epoch : r.wall_time_s / 3600.0;
    s.points.emplace_back(xv, *r.mean_episode_reward);
  }
  return s;
}

/// Self-contained SVG line chart, one polyline and legend entry per series.
inline std::string render_svg(const std::vector<PlotSeries>& series, XAxis x) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 640, H = 400, left = 60, right = 160, top = 20, bottom = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (auto [px, py] : s.points) {
      x0 = std::min(x0, px);
      x1 = std::max(x1, px);
      y0 = std::min(y0, py);
      y1 = std::max(y1, py);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + (1 - (v - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  os << "</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">" << format_real(xv)
       << "</text>\n";
    os << "<text x=\"" << left - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << format_real(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
     << (x == XAxis::epoch ? "epoch" : "wall time (hours)") << "</text>\n";
  os << "<text transform=\"translate(15," << top + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">mean episode reward</text>\n";
  os << "</g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colors[i % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[i].points.size(); ++k) {
      if (k) os << ' ';
      os << sx(series[i].points[k].first) << ',' << sy(series[i].points[k].second);
    }
    os << "\"/>\n";
  }
  os << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double ly = top + 10 + 18 * i;
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << colors[i % std::size(colors)] << "\" stroke-width=\"2\"/>";
    os << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << detail::xml_escape(series[i].label)
       << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

inline void emit_plot(const std::vector<std::string>& csvs, const std::string& out_svg, XAxis x) {
  if (csvs.empty()) throw UsageError("plot needs at least one metrics file");
  std::vector<PlotSeries> series;
  for (const auto& c : csvs) series.push_back(load_series(c, x));
  std::ofstream out(out_svg, std::ios::trunc);
  out << render_svg(series, x);
  if (!out) throw Error("cannot write " + out_svg);
}

}  // namespace drl
