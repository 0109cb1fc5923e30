#pragma once

#include <boost/rational.hpp>

#include <charconv>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace brwlab {

using Rational = boost::rational<std::int64_t>;

/// Raised on malformed descriptors, invalid parameters, or vertices that do
/// not belong to a graph.
class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Opaque vertex handle.  The code is a flat integer word whose layout is
/// owned by the graph family (Z^d: the d coordinates; tree: length followed
/// by child indices; products: left code followed by right code).
struct VertexId {
  std::vector<std::int64_t> code;

  VertexId() = default;
  explicit VertexId(std::vector<std::int64_t> c) : code(std::move(c)) {}
  VertexId(std::initializer_list<std::int64_t> c) : code(c) {}

  friend bool operator==(const VertexId&, const VertexId&) = default;
  friend auto operator<=>(const VertexId&, const VertexId&) = default;
};

struct VertexIdHash {
  std::size_t operator()(const VertexId& v) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ULL ^ v.code.size();
    for (auto c : v.code) {
      h ^= static_cast<std::uint64_t>(c) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

struct VertexPairHash {
  std::size_t operator()(const std::pair<VertexId, VertexId>& e) const noexcept {
    VertexIdHash h;
    return h(e.first) * 0x100000001b3ULL ^ h(e.second);
  }
};

inline double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\n' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' ||
                        s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::int64_t parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw GraphError("not an integer: '" + std::string(s) + "'");
  return v;
}

/// Splits on `sep` at bracket depth zero.
inline std::vector<std::string_view> split_top(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '(' || c == '[') ++depth;
    if (c == ')' || c == ']') --depth;
    if (c == sep && depth == 0) {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  parts.push_back(trim(s.substr(start)));
  return parts;
}

}  // namespace detail

/// Parses "3", "-2", "0.75", "1/4", "2.5e-3" into an exact rational.
inline Rational parse_rational(std::string_view text) {
  auto s = detail::trim(text);
  if (s.empty()) throw GraphError("empty number");
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    auto num = detail::parse_int(s.substr(0, slash));
    auto den = detail::parse_int(s.substr(slash + 1));
    if (den == 0) throw GraphError("zero denominator in '" + std::string(s) + "'");
    return Rational(num, den);
  }
  bool negative = false;
  if (s.front() == '-' || s.front() == '+') {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  std::int64_t exponent = 0;
  if (auto e = s.find_first_of("eE"); e != std::string_view::npos) {
    exponent = detail::parse_int(s.substr(e + 1));
    s = s.substr(0, e);
  }
  std::int64_t mantissa = 0;
  bool any_digit = false;
  bool after_point = false;
  for (char c : s) {
    if (c == '.' && !after_point) {
      after_point = true;
      continue;
    }
    if (c < '0' || c > '9') throw GraphError("not a number: '" + std::string(text) + "'");
    if (mantissa > (std::int64_t{1} << 58)) throw GraphError("too many digits: '" + std::string(text) + "'");
    mantissa = mantissa * 10 + (c - '0');
    any_digit = true;
    if (after_point) --exponent;
  }
  if (!any_digit) throw GraphError("not a number: '" + std::string(text) + "'");
  if (exponent > 18 || exponent < -18) throw GraphError("exponent out of range: '" + std::string(text) + "'");
  std::int64_t scale = 1;
  for (std::int64_t i = 0; i < (exponent < 0 ? -exponent : exponent); ++i) scale *= 10;
  Rational r = exponent < 0 ? Rational(mantissa, scale) : Rational(mantissa * scale);
  return negative ? -r : r;
}

inline std::string format_rational(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace brwlab
