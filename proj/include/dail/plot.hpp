#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dail/analysis.hpp"

// Static SVG: mean success against log2(instruction count), one polyline per algorithm.

namespace dail {

inline std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string sweep_plot_svg(const std::vector<SweepRow>& rows) {
  const auto sums = aggregate(rows);
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double max_x = 1.0;
  for (const auto& s : sums) {
    const double x = std::log2(static_cast<double>(s.count));
    series[s.algorithm].emplace_back(x, s.mean_success);
    max_x = std::max(max_x, x);
  }
  const double w = 640, h = 400, left = 60, right = 130, top = 20, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  const auto px = [&](double x) { return left + pw * x / max_x; };
  const auto py = [&](double y) { return top + ph * (1.0 - y); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_number(w) + "\" height=\"" + svg_number(h) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + svg_number(left) + "\" y1=\"" + svg_number(py(0)) + "\" x2=\"" + svg_number(left + pw) +
       "\" y2=\"" + svg_number(py(0)) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + svg_number(left) + "\" y1=\"" + svg_number(py(0)) + "\" x2=\"" + svg_number(left) +
       "\" y2=\"" + svg_number(py(1)) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = k / 4.0;
    s += "<text x=\"" + svg_number(left - 8) + "\" y=\"" + svg_number(py(y) + 4) + "\" text-anchor=\"end\">" +
         svg_number(y) + "</text>\n";
  }
  for (int k = 0; k <= static_cast<int>(std::ceil(max_x)); ++k)
    s += "<text x=\"" + svg_number(px(k)) + "\" y=\"" + svg_number(py(0) + 18) + "\" text-anchor=\"middle\">" +
         std::to_string(1 << k) + "</text>\n";
  s += "<text x=\"" + svg_number(left + pw / 2) + "\" y=\"" + svg_number(h - 10) +
       "\" text-anchor=\"middle\">number of instructions</text>\n";
  s += "<text x=\"15\" y=\"" + svg_number(top + ph / 2) + "\" transform=\"rotate(-90 15 " +
       svg_number(top + ph / 2) + ")\" text-anchor=\"middle\">success rate</text>\n";
  std::size_t idx = 0;
  for (const auto& [name, pts] : series) {
    const char* c = colors[idx % std::size(colors)];
    std::string path;
    for (const auto& [x, y] : pts) path += svg_number(px(x)) + "," + svg_number(py(y)) + " ";
    if (!path.empty()) path.pop_back();
    s += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" stroke-width=\"2\" points=\"" + path + "\"/>\n";
    for (const auto& [x, y] : pts)
      s += "<circle cx=\"" + svg_number(px(x)) + "\" cy=\"" + svg_number(py(y)) + "\" r=\"3\" fill=\"" + c + "\"/>\n";
    const double ly = top + 20 + 18.0 * static_cast<double>(idx);
    s += "<line x1=\"" + svg_number(left + pw + 15) + "\" y1=\"" + svg_number(ly) + "\" x2=\"" +
         svg_number(left + pw + 35) + "\" y2=\"" + svg_number(ly) + "\" stroke=\"" + c + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + svg_number(left + pw + 40) + "\" y=\"" + svg_number(ly + 4) + "\">" + name + "</text>\n";
    ++idx;
  }
  s += "</svg>\n";
  return s;
}

inline void write_sweep_plot(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << sweep_plot_svg(rows);
}

}  // namespace dail
