#pragma once

// Experiment configuration: an INI document with top-level keys shared by
// all commands and one section per command.  Every key is declared with a
// default (or marked required); unknown sections and keys are rejected, and
// the resolved key set is what gets written to output headers and manifests.

#include "brwlab/csv.hpp"
#include "brwlab/vertex.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace brwlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"spectral", "simulate", "scan", "coupling", "drift", "percolation"};
  return names;
}

struct KeySpec {
  std::string name;
  std::optional<std::string> fallback;  // nullopt: required
  std::string help;
};

/// Declared keys: "" is the top level, the rest are command sections.
inline const std::map<std::string, std::vector<KeySpec>>& config_schema() {
  static const std::map<std::string, std::vector<KeySpec>> schema{
      {"",
       {{"seed", "1", "master seed"},
        {"out", "", "output CSV path (default <command>.csv)"}}},
      {"spectral",
       {{"graph", std::nullopt, "graph descriptor"},
        {"mode", "ladder", "ladder | occupancy"},
        {"center", "", "ball center (default: graph origin)"},
        {"radii", "1..10", "ball radii, increasing"},
        {"symmetry", "true", "use an equitable quotient when the family has one"},
        {"tol", "1e-10", "power-iteration residual tolerance"},
        {"max_iter", "100000", "power-iteration budget"},
        {"lambda", "1", "occupancy: rate"},
        {"times", "1", "occupancy: times"},
        {"target", "", "occupancy: target vertex (default: center)"},
        {"order", "-1", "occupancy: series order (-1: automatic)"}}},
      {"simulate",
       {{"graph", std::nullopt, "graph descriptor"},
        {"lambda", std::nullopt, "rates, one row each"},
        {"m", "inf", "site caps, one row each"},
        {"n0", "inf", "generation cap"},
        {"nbar", "inf", "total-birth cap"},
        {"horizon", "50", "time horizon T"},
        {"replicas", "1000", "replicas per row"},
        {"mode", "weak", "weak | local"},
        {"initial", "", "vertex:count; ... (default: one particle at the origin)"},
        {"marked", "", "x0 for local survival (default: first initial vertex)"},
        {"ceiling", "1000000", "population ceiling per replica"}}},
      {"scan",
       {{"graph", std::nullopt, "graph descriptor"},
        {"mode", "local", "weak | local"},
        {"lambda_lo", std::nullopt, "lower bracket end"},
        {"lambda_hi", std::nullopt, "upper bracket end"},
        {"refinements", "6", "bisection steps"},
        {"threshold", "0.05", "survival frequency above which a probe is supercritical"},
        {"m", "inf", "site caps, one scan each"},
        {"n0", "inf", "generation cap"},
        {"nbar", "inf", "total-birth cap"},
        {"horizon", "50", "time horizon T"},
        {"replicas", "1000", "replicas per probe"},
        {"initial", "", "vertex:count; ..."},
        {"marked", "", "x0 for local survival"},
        {"ceiling", "1000000", "population ceiling per replica"}}},
      {"coupling",
       {{"mode", "iid", "iid | block | estimate | tune"},
        {"graph", "srw(1)", "graph X (block modes)"},
        {"index", "", "index graph (default depends on scheme)"},
        {"scheme", "singleton", "singleton | interval | drift"},
        {"width", "1", "interval block width"},
        {"d1", "1", "drift scheme jump"},
        {"d2", "2", "drift scheme jump"},
        {"lambda", "2", "rate"},
        {"p", "0.8", "iid: open probabilities, one block of rows each"},
        {"t_bar", "1", "block time"},
        {"k", "1", "particle threshold"},
        {"m", "inf", "site cap"},
        {"n0", "inf", "generation cap"},
        {"nbar", "inf", "total-birth cap"},
        {"epsilon", "0.05", "tune: target failure probability"},
        {"t_step", "0.25", "tune: t-bar grid spacing"},
        {"t_points", "40", "tune: t-bar grid size"},
        {"k_doublings", "12", "tune: k = 1, 2, ..., 2^(k_doublings - 1)"},
        {"replicas", "1000", "estimate/tune: replicas"},
        {"variants", "eta,eta_m,eta_bar,eta_bar_m,eta_hat", "estimate: processes"},
        {"source", "", "estimate/tune: source index vertex (default: index origin)"},
        {"samples", "1000", "iid/block: field samples"},
        {"origin", "0", "iid/block: origin index"},
        {"index_lo", "", "window (default: origin - depth * max jump)"},
        {"index_hi", "", "window (default: origin + depth * max jump)"},
        {"depth", "100", "window depth"},
        {"dump", "", "iid/block: write the first sampled field here"}}},
      {"drift",
       {{"p", std::nullopt, "up probability"},
        {"q", std::nullopt, "down probability"},
        {"lambda", std::nullopt, "rate"},
        {"margin", "0.001", "certification margin"},
        {"grid_step", "0.05", "CSV grid spacing"},
        {"max_n", "1000000", "largest n tried"}}},
      {"percolation",
       {{"dim", "2", "box dimension (<= 3)"},
        {"side", "30", "box side L (<= 100)"},
        {"p", "dyadic:1..10", "retention sequence: dyadic:a..b or n:p, ..."},
        {"seeds", "100", "independent environments"},
        {"tol", "1e-10", "power-iteration residual tolerance"},
        {"max_iter", "100000", "power-iteration budget"}}},
  };
  return schema;
}

/// Resolved key/value pairs for one command.
class Settings {
 public:
  Settings() = default;
  Settings(std::string command, std::map<std::string, std::string> values)
      : command_(std::move(command)), values_(std::move(values)) {}

  const std::string& command() const noexcept { return command_; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }

  void set(const std::string& key, std::string value) {
    if (!values_.contains(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = std::move(value);
  }

  std::uint64_t seed() const { return to_uint("seed"); }

  double to_double(const std::string& key) const { return parse_double(key, raw(key)); }

  double positive(const std::string& key) const {
    const double v = to_double(key);
    if (!(v > 0.0)) fail(key, "must be positive");
    return v;
  }

  double nonnegative(const std::string& key) const {
    const double v = to_double(key);
    if (!(v >= 0.0)) fail(key, "must be nonnegative");
    return v;
  }

  double probability(const std::string& key) const {
    const double v = to_double(key);
    if (!(v >= 0.0 && v <= 1.0)) fail(key, "must be in [0, 1]");
    return v;
  }

  std::int64_t to_int(const std::string& key) const { return parse_int64(key, raw(key)); }

  std::uint64_t to_uint(const std::string& key) const {
    const auto& s = raw(key);
    const auto t = detail::trim(s);
    if (t.empty() || t.front() == '-') fail(key, "must be a nonnegative integer");
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size()) fail(key, "must be a nonnegative integer");
    return v;
  }

  std::uint64_t at_least(const std::string& key, std::uint64_t lo) const {
    const auto v = to_uint(key);
    if (v < lo) fail(key, "must be >= " + std::to_string(lo));
    return v;
  }

  /// Nonnegative integer or "inf".
  std::uint64_t cap(const std::string& key, std::uint64_t lo, std::uint64_t inf) const {
    return parse_cap(key, raw(key), lo, inf);
  }

  bool to_bool(const std::string& key) const {
    const auto t = std::string(detail::trim(raw(key)));
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    fail(key, "must be true or false");
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed) const {
    const auto t = std::string(detail::trim(raw(key)));
    if (std::find(allowed.begin(), allowed.end(), t) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "must be one of " + list);
    }
    return t;
  }

  std::vector<std::string> items(const std::string& key) const {
    std::vector<std::string> out;
    for (auto& part : detail::split_top(raw(key), ',')) {
      auto t = std::string(detail::trim(part));
      if (t.empty()) fail(key, "has an empty list entry");
      out.push_back(t);
    }
    if (out.empty()) fail(key, "must not be empty");
    return out;
  }

  std::vector<double> doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : items(key)) out.push_back(parse_double(key, s));
    return out;
  }

  std::vector<std::uint64_t> caps(const std::string& key, std::uint64_t lo, std::uint64_t inf) const {
    std::vector<std::uint64_t> out;
    for (const auto& s : items(key)) out.push_back(parse_cap(key, s, lo, inf));
    return out;
  }

  /// Integers given as a list with optional ranges: "1..5, 8".
  std::vector<std::int64_t> integers(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& s : items(key)) {
      const auto dots = s.find("..");
      if (dots == std::string::npos) {
        out.push_back(parse_int64(key, s));
        continue;
      }
      const auto a = parse_int64(key, s.substr(0, dots));
      const auto b = parse_int64(key, s.substr(dots + 2));
      if (b < a || b - a > 100000) fail(key, "has a bad range '" + s + "'");
      for (auto v = a; v <= b; ++v) out.push_back(v);
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError((command_.empty() ? "" : "[" + command_ + "] ") + key + " = '" + raw_or_empty(key) + "' " + why);
  }

 private:
  std::string raw_or_empty(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? "" : it->second;
  }

  double parse_double(const std::string& key, const std::string& s) const {
    const auto t = detail::trim(s);
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || p != t.data() + t.size() || !std::isfinite(v))
      fail(key, "is not a finite number");
    return v;
  }

  std::int64_t parse_int64(const std::string& key, const std::string& s) const {
    const auto t = detail::trim(s);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || p != t.data() + t.size()) fail(key, "is not an integer");
    return v;
  }

  std::uint64_t parse_cap(const std::string& key, const std::string& s, std::uint64_t lo, std::uint64_t inf) const {
    const auto t = std::string(detail::trim(s));
    if (t == "inf") return inf;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || p != t.data() + t.size() || v < lo)
      fail(key, "must be an integer >= " + std::to_string(lo) + " or inf");
    return v;
  }

  std::string command_;
  std::map<std::string, std::string> values_;
};

/// Parses an INI document and resolves the settings of `command`.  Other
/// command sections are checked for unknown keys but otherwise ignored.
inline Settings load_settings(std::istream& in, const std::string& command) {
  const auto& schema = config_schema();
  if (command.empty() || !schema.contains(command)) throw ConfigError("unknown command '" + command + "'");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  auto known = [&](const std::string& section, const std::string& key) {
    const auto& keys = schema.at(section);
    return std::any_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
  };
  std::map<std::string, std::string> given;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      if (!known("", name)) throw ConfigError("unknown top-level key '" + name + "'");
      given[name] = node.data();
      continue;
    }
    if (!schema.contains(name) || name.empty()) throw ConfigError("unknown section [" + name + "]");
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw ConfigError("nested key in [" + name + "]");
      if (!known(name, key)) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
      if (name == command) given[key] = leaf.data();
    }
  }
  std::map<std::string, std::string> values;
  for (const auto& section : {std::string(), command})
    for (const auto& k : schema.at(section)) {
      auto it = given.find(k.name);
      if (it != given.end()) values[k.name] = it->second;
      else if (k.fallback) values[k.name] = *k.fallback;
      else throw ConfigError("[" + command + "] missing required key '" + k.name + "'");
    }
  if (values["out"].empty()) values["out"] = command + ".csv";
  return Settings(command, std::move(values));
}

inline Settings load_settings(const std::string& text, const std::string& command) {
  std::istringstream in(text);
  return load_settings(in, command);
}

/// "# key = value" lines, in key order.
inline void write_settings_header(std::ostream& os, const Settings& s, const std::string& version) {
  os << "# brwlab " << version << ' ' << s.command() << '\n';
  for (const auto& [k, v] : s.values())
    if (k != "out") os << "# " << k << (v.empty() ? " =" : " = ") << v << '\n';
}

}  // namespace brwlab
