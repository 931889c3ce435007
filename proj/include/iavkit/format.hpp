#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace iavkit {

/// Shortest text that round-trips a double exactly.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Fixed-precision text for figures, where exactness does not matter.
inline std::string format_fixed(double x, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace iavkit
