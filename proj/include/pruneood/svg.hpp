#pragma once

// Minimal standalone SVG charts: grouped bars and line plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace pruneood::svg {

struct Series {
  std::string name;
  std::vector<double> values;
};

namespace detail {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string escape(const std::string& s) {
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

struct Frame {
  double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  double lo = 0.0, hi = 1.0;

  [[nodiscard]] double plot_w() const { return width - left - right; }
  [[nodiscard]] double plot_h() const { return height - top - bottom; }
  [[nodiscard]] double y(double v) const { return top + plot_h() * (1.0 - (v - lo) / (hi - lo)); }
};

inline void range_of(const std::vector<Series>& series, double& lo, double& hi, bool from_zero) {
  lo = from_zero ? 0.0 : HUGE_VAL;
  hi = from_zero ? 0.0 : -HUGE_VAL;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo < hi)) {
    lo = std::isfinite(lo) ? lo - 0.5 : 0.0;
    hi = lo + 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  if (!from_zero) lo -= pad;
  hi += pad;
}

inline void open(std::ostream& os, const Frame& f, const std::string& title, const std::string& y_label) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(f.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  os << "<text transform=\"translate(16," << num(f.top + f.plot_h() / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.lo + (f.hi - f.lo) * i / 4.0;
    const double y = f.y(v);
    os << "<line x1=\"" << num(f.left) << "\" x2=\"" << num(f.left + f.plot_w()) << "\" y1=\"" << num(y)
       << "\" y2=\"" << num(y) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << num(f.left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v)
       << "</text>\n";
  }
  os << "<line x1=\"" << num(f.left) << "\" x2=\"" << num(f.left) << "\" y1=\"" << num(f.top) << "\" y2=\""
     << num(f.top + f.plot_h()) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(f.left) << "\" x2=\"" << num(f.left + f.plot_w()) << "\" y1=\""
     << num(f.top + f.plot_h()) << "\" y2=\"" << num(f.top + f.plot_h()) << "\" stroke=\"black\"/>\n";
}

inline void legend(std::ostream& os, const Frame& f, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = f.top + 10 + 20.0 * static_cast<double>(i);
    const double x = f.left + f.plot_w() + 15;
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[i % 6] << "\"/>\n";
    os << "<text x=\"" << num(x + 18) << "\" y=\"" << num(y + 2) << "\">" << escape(series[i].name) << "</text>\n";
  }
}

}  // namespace detail

// One group of bars per category, one bar per series within a group.
inline void bar_chart(std::ostream& os, const std::string& title, const std::string& y_label,
                      const std::vector<std::string>& categories, const std::vector<Series>& series) {
  detail::Frame f;
  detail::range_of(series, f.lo, f.hi, true);
  detail::open(os, f, title, y_label);
  const double group_w = f.plot_w() / static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const double bar_w = 0.8 * group_w / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = f.left + group_w * static_cast<double>(c) + 0.1 * group_w;
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (c >= series[s].values.size()) continue;
      const double v = series[s].values[c];
      const double y = f.y(v);
      os << "<rect x=\"" << detail::num(gx + bar_w * static_cast<double>(s)) << "\" y=\"" << detail::num(y)
         << "\" width=\"" << detail::num(bar_w) << "\" height=\"" << detail::num(f.y(0.0) - y) << "\" fill=\""
         << detail::kPalette[s % 6] << "\"><title>" << detail::num(v) << "</title></rect>\n";
    }
    os << "<text x=\"" << detail::num(gx + 0.4 * group_w) << "\" y=\"" << detail::num(f.top + f.plot_h() + 18)
       << "\" text-anchor=\"middle\">" << detail::escape(categories[c]) << "</text>\n";
  }
  detail::legend(os, f, series);
  os << "</svg>\n";
}

// Polylines over a shared x axis.
inline void line_chart(std::ostream& os, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<double>& xs, const std::vector<Series>& series) {
  detail::Frame f;
  detail::range_of(series, f.lo, f.hi, false);
  detail::open(os, f, title, y_label);
  const double x_lo = xs.empty() ? 0.0 : xs.front();
  const double x_hi = xs.size() < 2 ? x_lo + 1.0 : xs.back();
  auto px = [&](double x) { return f.left + f.plot_w() * (x - x_lo) / (x_hi - x_lo); };
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << detail::kPalette[s % 6] << "\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < series[s].values.size(); ++i) {
      if (!std::isfinite(series[s].values[i])) continue;
      os << detail::num(px(xs[i])) << ',' << detail::num(f.y(series[s].values[i])) << ' ';
    }
    os << "\"/>\n";
  }
  for (double x : {x_lo, x_hi}) {
    os << "<text x=\"" << detail::num(px(x)) << "\" y=\"" << detail::num(f.top + f.plot_h() + 18)
       << "\" text-anchor=\"middle\">" << detail::num(x) << "</text>\n";
  }
  os << "<text x=\"" << detail::num(f.left + f.plot_w() / 2) << "\" y=\"" << detail::num(f.height - 10)
     << "\" text-anchor=\"middle\">" << detail::escape(x_label) << "</text>\n";
  detail::legend(os, f, series);
  os << "</svg>\n";
}

}  // namespace pruneood::svg
