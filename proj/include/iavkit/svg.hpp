#pragma once

// Minimal SVG figures. Every figure is a derived view of a CSV the report
// writes next to it; numbers are rounded for display only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iavkit/format.hpp"
#include "iavkit/stats.hpp"

namespace iavkit::svg {

struct Rgb {
  int r, g, b;
};

/// Viridis-like ramp sampled at five stops, t in [0, 1].
inline Rgb ramp(double t) {
  static constexpr std::array<Rgb, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double pos = t * static_cast<double>(stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), stops.size() - 2);
  const double f = pos - static_cast<double>(i);
  auto mix = [&](int a, int b) { return static_cast<int>(std::lround(a + f * (b - a))); };
  return {mix(stops[i].r, stops[i + 1].r), mix(stops[i].g, stops[i + 1].g), mix(stops[i].b, stops[i + 1].b)};
}

inline std::string color(const Rgb& c) {
  std::ostringstream out;
  out << "rgb(" << c.r << ',' << c.g << ',' << c.b << ')';
  return out.str();
}

/// Categorical palette for series and class labels.
inline std::string palette(std::size_t i) {
  static constexpr std::array<const char*, 10> colors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % colors.size()];
}

inline std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

class Canvas {
 public:
  Canvas(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ << "<rect x=\"" << format_fixed(x) << "\" y=\"" << format_fixed(y) << "\" width=\"" << format_fixed(w)
          << "\" height=\"" << format_fixed(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    body_ << "<line x1=\"" << format_fixed(x1) << "\" y1=\"" << format_fixed(y1) << "\" x2=\"" << format_fixed(x2)
          << "\" y2=\"" << format_fixed(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << format_fixed(width)
          << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << format_fixed(cx) << "\" cy=\"" << format_fixed(cy) << "\" r=\"" << format_fixed(r)
          << "\" fill=\"" << fill << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& points, const std::string& stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : points) body_ << format_fixed(x) << ',' << format_fixed(y) << ' ';
    body_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& content, int size = 12, const std::string& anchor = "middle",
            const std::string& fill = "#000") {
    body_ << "<text x=\"" << format_fixed(x) << "\" y=\"" << format_fixed(y) << "\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\" fill=\"" << fill << "\" font-family=\"sans-serif\">"
          << escape(content) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_fixed(width_, 0) << "\" height=\""
        << format_fixed(height_, 0) << "\" viewBox=\"0 0 " << format_fixed(width_, 0) << ' '
        << format_fixed(height_, 0) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

/// Layers as rows, heads as columns. With `sort_heads`, each row is sorted
/// in decreasing order, so column k shows the k-th best head of the layer.
inline std::string heatmap(const std::vector<double>& values, std::size_t layers, std::size_t heads,
                           const std::string& title, bool sort_heads, double vmin = 0.0, double vmax = 1.0) {
  const double cell = 36.0, left = 60.0, top = 50.0;
  Canvas c(left + cell * static_cast<double>(heads) + 90.0, top + cell * static_cast<double>(layers) + 50.0);
  c.text((left + cell * static_cast<double>(heads)) / 2.0 + 20.0, 24.0, title, 14);
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> row(values.begin() + static_cast<std::ptrdiff_t>(l * heads),
                            values.begin() + static_cast<std::ptrdiff_t>((l + 1) * heads));
    if (sort_heads) std::sort(row.begin(), row.end(), std::greater<>());
    const double y = top + cell * static_cast<double>(l);
    c.text(left - 8.0, y + cell / 2.0 + 4.0, "L" + std::to_string(l + 1), 11, "end");
    for (std::size_t h = 0; h < heads; ++h) {
      const double x = left + cell * static_cast<double>(h);
      const double t = vmax > vmin ? (row[h] - vmin) / (vmax - vmin) : 0.0;
      c.rect(x, y, cell, cell, color(ramp(t)), "#ffffff");
      c.text(x + cell / 2.0, y + cell / 2.0 + 4.0, format_fixed(row[h]), 9, "middle", t > 0.6 ? "#000" : "#fff");
    }
  }
  const double bottom = top + cell * static_cast<double>(layers);
  for (std::size_t h = 0; h < heads; ++h) {
    c.text(left + cell * (static_cast<double>(h) + 0.5), bottom + 16.0,
           sort_heads ? "#" + std::to_string(h + 1) : "H" + std::to_string(h + 1), 10);
  }
  const double bar_x = left + cell * static_cast<double>(heads) + 20.0;
  for (int k = 0; k < 20; ++k) {
    const double t = 1.0 - (k + 0.5) / 20.0;
    c.rect(bar_x, top + (bottom - top) * k / 20.0, 14.0, (bottom - top) / 20.0 + 0.5, color(ramp(t)));
  }
  c.text(bar_x + 18.0, top + 8.0, format_fixed(vmax), 10, "start");
  c.text(bar_x + 18.0, bottom, format_fixed(vmin), 10, "start");
  return c.str();
}

struct Frame {
  double left = 60.0, top = 40.0, width = 480.0, height = 280.0;
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;

  double x(double v) const { return left + (xmax > xmin ? (v - xmin) / (xmax - xmin) : 0.5) * width; }
  double y(double v) const { return top + height - (ymax > ymin ? (v - ymin) / (ymax - ymin) : 0.5) * height; }
};

inline void axes(Canvas& c, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  c.line(f.left, f.top + f.height, f.left + f.width, f.top + f.height, "#000");
  c.line(f.left, f.top, f.left, f.top + f.height, "#000");
  for (int k = 0; k <= 4; ++k) {
    const double v = f.ymin + (f.ymax - f.ymin) * k / 4.0;
    c.line(f.left - 4.0, f.y(v), f.left, f.y(v), "#000");
    c.text(f.left - 6.0, f.y(v) + 4.0, format_fixed(v), 10, "end");
  }
  c.text(f.left + f.width / 2.0, f.top + f.height + 36.0, xlabel, 12);
  c.text(14.0, f.top + f.height / 2.0, ylabel, 12);
}

/// One box per entry: whiskers at min/max, box at q1..q3, bar at the median.
inline std::string boxplot(const std::vector<Summary>& boxes, const std::vector<std::string>& labels,
                           const std::string& title, const std::string& ylabel) {
  Frame f;
  f.width = std::max(240.0, 36.0 * static_cast<double>(boxes.size()));
  f.ymin = 0.0;
  f.ymax = 0.0;
  for (const auto& b : boxes) f.ymax = std::max(f.ymax, b.max);
  if (f.ymax <= f.ymin) f.ymax = f.ymin + 1.0;
  Canvas c(f.left + f.width + 30.0, f.top + f.height + 60.0);
  c.text(f.left + f.width / 2.0, 22.0, title, 14);
  axes(c, f, "head", ylabel);
  const double slot = f.width / static_cast<double>(std::max<std::size_t>(boxes.size(), 1));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    const double cx = f.left + slot * (static_cast<double>(i) + 0.5);
    const double w = slot * 0.5;
    c.line(cx, f.y(b.min), cx, f.y(b.q1), "#333");
    c.line(cx, f.y(b.q3), cx, f.y(b.max), "#333");
    c.line(cx - w / 4, f.y(b.min), cx + w / 4, f.y(b.min), "#333");
    c.line(cx - w / 4, f.y(b.max), cx + w / 4, f.y(b.max), "#333");
    c.rect(cx - w / 2, f.y(b.q3), w, std::max(f.y(b.q1) - f.y(b.q3), 0.5), palette(0), "#333");
    c.line(cx - w / 2, f.y(b.median), cx + w / 2, f.y(b.median), "#d62728", 2.0);
    if (i < labels.size()) c.text(cx, f.top + f.height + 14.0, labels[i], 9);
  }
  return c.str();
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel) {
  Frame f;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        f.xmin = f.xmax = x;
        first = false;
      }
      f.xmin = std::min(f.xmin, x);
      f.xmax = std::max(f.xmax, x);
    }
  }
  f.ymin = 0.0;
  f.ymax = 1.0;
  Canvas c(f.left + f.width + 160.0, f.top + f.height + 60.0);
  c.text(f.left + f.width / 2.0, 22.0, title, 14);
  axes(c, f, xlabel, ylabel);
  c.text(f.left, f.top + f.height + 16.0, format_fixed(f.xmin), 10);
  c.text(f.left + f.width, f.top + f.height + 16.0, format_fixed(f.xmax), 10);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[i].points) {
      pts.emplace_back(f.x(x), f.y(y));
      c.circle(f.x(x), f.y(y), 3.0, palette(i));
    }
    c.polyline(pts, palette(i));
    const double ly = f.top + 14.0 * static_cast<double>(i) + 6.0;
    c.line(f.left + f.width + 12.0, ly, f.left + f.width + 28.0, ly, palette(i), 2.0);
    c.text(f.left + f.width + 32.0, ly + 4.0, series[i].name, 10, "start");
  }
  return c.str();
}

/// Points colored by integer class.
inline std::string scatter(const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::vector<std::int64_t>& classes, const std::string& title) {
  Frame f;
  f.width = 400.0;
  f.height = 400.0;
  if (!xs.empty()) {
    const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
    const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
    const double px = 0.05 * (*xmax - *xmin) + 1e-12, py = 0.05 * (*ymax - *ymin) + 1e-12;
    f.xmin = *xmin - px;
    f.xmax = *xmax + px;
    f.ymin = *ymin - py;
    f.ymax = *ymax + py;
  }
  Canvas c(f.left + f.width + 100.0, f.top + f.height + 30.0);
  c.text(f.left + f.width / 2.0, 22.0, title, 14);
  c.rect(f.left, f.top, f.width, f.height, "none", "#000");
  std::vector<std::int64_t> seen;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    c.circle(f.x(xs[i]), f.y(ys[i]), 4.0, palette(static_cast<std::size_t>(classes[i])));
    if (std::find(seen.begin(), seen.end(), classes[i]) == seen.end()) seen.push_back(classes[i]);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t k = 0; k < seen.size(); ++k) {
    const double ly = f.top + 14.0 * static_cast<double>(k) + 6.0;
    c.circle(f.left + f.width + 16.0, ly, 4.0, palette(static_cast<std::size_t>(seen[k])));
    c.text(f.left + f.width + 26.0, ly + 4.0, "class " + std::to_string(seen[k]), 10, "start");
  }
  return c.str();
}

}  // namespace iavkit::svg
