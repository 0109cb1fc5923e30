#pragma once

// Locale-independent number formatting for tabular output.  Doubles are
// written in shortest round-trip form so files are bit-exact across runs.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <system_error>

namespace brwlab {

inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_cell(const T& v) {
  if constexpr (std::is_floating_point_v<T>) {
    return fmt_double(static_cast<double>(v));
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else {
    return std::string(v);
  }
}

/// Writes one CSV row terminated by '\n'.
template <typename... Ts>
void csv_row(std::ostream& os, const Ts&... cells) {
  bool first = true;
  ((os << (first ? "" : ",") << fmt_cell(cells), first = false), ...);
  os << '\n';
}

}  // namespace brwlab
