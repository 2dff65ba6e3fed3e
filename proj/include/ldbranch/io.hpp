#pragma once

// Locale-independent number formatting for CSV and text output.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <system_error>

namespace ldbranch::io {

// 12 significant digits, shortest general form; "inf"/"nan" spelled out.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 12);
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::uint64_t v) { return std::to_string(v); }
inline std::string format_number(std::int64_t v) { return std::to_string(v); }
inline std::string format_number(int v) { return std::to_string(v); }

}  // namespace ldbranch::io
