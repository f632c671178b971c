#pragma once

// Minimal SVG line plots with shaded interval bands. NaN y values are gaps:
// the line and band break there and the missing x positions are marked.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace clens {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y, low, high;  // low/high may be empty
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<double> y_min, y_max;
  std::string note;  // small text under the title
  int width = 720;
  int height = 440;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
                                  "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#843c39", "#7b4173"};
  return colours[i % (sizeof colours / sizeof colours[0])];
}

}  // namespace detail

inline std::string line_plot_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      for (double v : {s.y[i], s.low.empty() ? s.y[i] : s.low[i], s.high.empty() ? s.y[i] : s.high[i]})
        if (std::isfinite(v)) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (xmax == xmin) xmin -= 1, xmax += 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (spec.y_min) ymin = *spec.y_min;
  if (spec.y_max) ymax = *spec.y_max;
  if (ymax == ymin) ymin -= 1, ymax += 1;

  const double left = 70, right = 170, top = 50, bottom = 60;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::xml_escape(spec.title) << "</text>\n";
  if (!spec.note.empty())
    o << "<text x=\"" << spec.width / 2 << "\" y=\"38\" text-anchor=\"middle\" font-size=\"10\" fill=\"#555\">"
      << detail::xml_escape(spec.note) << "</text>\n";

  // axes and ticks
  o << "<g stroke=\"#333\"><line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
    << top + ph << "\"/><line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\"/></g>\n";
  std::vector<double> xticks;
  for (const auto& s : series)
    for (double x : s.x) xticks.push_back(x);
  std::sort(xticks.begin(), xticks.end());
  xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
  for (double x : xticks)
    o << "<text x=\"" << detail::num(px(x)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
      << detail::tick_label(x) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = ymin + (ymax - ymin) * i / 5.0;
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << detail::num(py(y)) << "\" y2=\""
      << detail::num(py(y)) << "\" stroke=\"#eee\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << detail::num(py(y) + 4) << "\" text-anchor=\"end\">"
      << detail::tick_label(y) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 18 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::xml_escape(spec.y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* colour = detail::palette(si);
    // split into runs of finite points
    std::vector<std::vector<std::size_t>> runs(1);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i]))
        runs.back().push_back(i);
      else if (!runs.back().empty())
        runs.emplace_back();
    }
    for (const auto& run : runs) {
      if (run.empty()) continue;
      if (!s.low.empty() && !s.high.empty()) {
        o << "<polygon fill=\"" << colour << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
        for (std::size_t i : run) o << detail::num(px(s.x[i])) << ',' << detail::num(py(s.high[i])) << ' ';
        for (auto it = run.rbegin(); it != run.rend(); ++it)
          o << detail::num(px(s.x[*it])) << ',' << detail::num(py(s.low[*it])) << ' ';
        o << "\"/>\n";
      }
      o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i : run) o << detail::num(px(s.x[i])) << ',' << detail::num(py(s.y[i])) << ' ';
      o << "\"/>\n";
      for (std::size_t i : run)
        o << "<circle cx=\"" << detail::num(px(s.x[i])) << "\" cy=\"" << detail::num(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (!std::isfinite(s.y[i]))
        o << "<text x=\"" << detail::num(px(s.x[i])) << "\" y=\"" << top + ph - 4 << "\" text-anchor=\"middle\" fill=\""
          << colour << "\" class=\"gap\">missing</text>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(si);
    o << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"10\" fill=\"" << colour
      << "\"/><text x=\"" << left + pw + 30 << "\" y=\"" << ly << "\">" << detail::xml_escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace clens
