// Minimal SVG plots: trajectory panels and sigma time courses.
#pragma once

#include <algorithm>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vbp/common.hpp"
#include "vbp/seqdata.hpp"

namespace vbp::svg {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

struct Panel {
  std::string title;
  std::vector<Trajectory2D> lines;  // drawn in palette order
};

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Panels side by side, each showing the unit square with y pointing up.
inline void trajectory_panels(std::ostream& os, const std::vector<Panel>& panels, double size = 240.0) {
  const double pad = 24.0, top = 28.0;
  const double width = pad + static_cast<double>(panels.size()) * (size + pad);
  const double height = top + size + pad;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const double x0 = pad + static_cast<double>(k) * (size + pad);
    os << "<text x=\"" << num(x0) << "\" y=\"18\">" << escape(panels[k].title) << "</text>\n";
    os << "<rect x=\"" << num(x0) << "\" y=\"" << num(top) << "\" width=\"" << num(size) << "\" height=\""
       << num(size) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (std::size_t l = 0; l < panels[k].lines.size(); ++l) {
      const auto& t = panels[k].lines[l];
      if (t.step_count() == 0) continue;
      os << "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" << kPalette[l % std::size(kPalette)]
         << "\" points=\"";
      for (const Point2& p : t.points()) os << num(x0 + p.x * size) << ',' << num(top + (1.0 - p.y) * size) << ' ';
      os << "\"/>\n";
    }
  }
  os << "</svg>\n";
}

struct Series {
  std::string name;
  std::vector<double> values;  // plotted against steps 1..n
  std::size_t first_step = 1;
};

/// Line chart of several series sharing one axis pair.
inline void line_chart(std::ostream& os, const std::string& title, const std::string& y_label,
                       const std::vector<Series>& series, double width = 640.0, double height = 260.0) {
  const double left = 56.0, right = 140.0, top = 28.0, bottom = 36.0;
  const double pw = width - left - right, ph = height - top - bottom;
  double lo = 0.0, hi = 0.0;
  std::size_t x_max = 2;
  bool any = false;
  for (const auto& s : series)
    for (double v : s.values) {
      if (!any) lo = hi = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      any = true;
    }
  for (const auto& s : series) x_max = std::max(x_max, s.first_step + s.values.size());
  if (!(hi > lo)) hi = lo + 1.0;
  auto sx = [&](double step) { return left + (step - 1.0) / static_cast<double>(x_max - 1) * pw; };
  auto sy = [&](double v) { return top + (1.0 - (v - lo) / (hi - lo)) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left) << "\" y=\"18\">" << escape(title) << "</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  os << "<text x=\"4\" y=\"" << num(top + 10) << "\">" << escape(format_double(hi)).substr(0, 8) << "</text>\n";
  os << "<text x=\"4\" y=\"" << num(top + ph) << "\">" << escape(format_double(lo)).substr(0, 8) << "</text>\n";
  os << "<text x=\"4\" y=\"" << num(top + ph / 2) << "\">" << escape(y_label) << "</text>\n";
  os << "<text x=\"" << num(left + pw / 2 - 16) << "\" y=\"" << num(height - 8) << "\">step</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" << colour << "\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i)
      os << num(sx(static_cast<double>(s.first_step + i))) << ',' << num(sy(s.values[i])) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << num(left + pw + 8) << "\" y=\"" << num(top + 14 + 16 * static_cast<double>(k))
       << "\" fill=\"" << colour << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace vbp::svg
