#pragma once

#include <charconv>
#include <string>

namespace tmf {

// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// Nine significant digits: exact round trip for any float.
inline std::string format_float9(float x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 9);
  return std::string(buf, r.ptr);
}

}  // namespace tmf
