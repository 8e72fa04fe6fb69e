#pragma once

#include <charconv>
#include <cstdio>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pathfollow/common.hpp"

namespace pathfollow::csv {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim_eol(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);
  return line;
}

inline double parse_double(std::string_view field, std::size_t line_no, std::string_view column) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                     "': not a number: '" + std::string(field) + "'");
  }
  return value;
}

/// Shortest text that reads back to the same double.
inline std::string format_exact(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string out(buf);
  if (out == "-0" || out.find_first_not_of("-0.") == std::string::npos) {
    // Normalise negative zero so identical geometry prints identically.
    if (!out.empty() && out[0] == '-') out.erase(0, 1);
  }
  return out;
}

}  // namespace pathfollow::csv
