#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "iavkit/error.hpp"

namespace iavkit {

/// Five-number summary plus moments, as drawn in a boxplot.
struct Summary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double variance = 0.0;  // population variance
};

/// Quantile by linear interpolation between order statistics
/// (position q * (n - 1)), the same convention as numpy's default.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::EmptyBundle, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::EmptyBundle, "summary of empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  Summary s;
  s.min = sorted.front();
  s.max = sorted.back();
  s.q1 = quantile_sorted(sorted, 0.25);
  s.median = quantile_sorted(sorted, 0.5);
  s.q3 = quantile_sorted(sorted, 0.75);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.variance = ss / static_cast<double>(values.size());
  return s;
}

}  // namespace iavkit
