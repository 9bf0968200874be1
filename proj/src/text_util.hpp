#pragma once

// Number formatting and CSV helpers shared by the report writers.

#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace s3m::detail {

/// Shortest round-trip decimal form; identical across runs for equal values.
inline std::string format_number(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

inline std::string format_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string{}; }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace s3m::detail
