#pragma once

// Graph descriptors, the text form used in experiment configs:
//
//   loop                                 single vertex, self-loop of weight 1
//   explicit(n; a>b:w; ...)              finite graph on {0..n-1}
//   srw(d)                               simple random walk on Z^d
//   zd(d; s1,...,sd:w; ...)              translation-invariant kernel on Z^d
//   drift(p; q)                          walk on Z, p(i,i+1)=p, p(i,i-1)=q
//   tree(r)                              simple random walk on the r-regular tree
//   cross(G; H)  box(G; H)               tensor and cartesian products
//   zbox(d; L)                           {0..L-1}^d with simple-random-walk weights
//
// Weights accept decimals and fractions ("0.25", "1/4") and are kept exact.
// Arguments may be separated by ';' or, when unambiguous, ','.

#include "brwlab/graph.hpp"

namespace brwlab {

namespace detail {

inline std::vector<std::string_view> descriptor_args(std::string_view body, bool allow_comma) {
  auto parts = split_top(body, ';');
  if (parts.size() == 1 && allow_comma) parts = split_top(body, ',');
  if (parts.size() == 1 && parts[0].empty()) parts.clear();
  return parts;
}

inline void expect_args(std::string_view name, const std::vector<std::string_view>& args, std::size_t n) {
  if (args.size() != n)
    throw GraphError(std::string(name) + " takes " + std::to_string(n) + " argument(s), got " +
                     std::to_string(args.size()));
}

}  // namespace detail

inline GraphPtr parse_graph(std::string_view descriptor) {
  auto text = detail::trim(descriptor);
  if (text.empty()) throw GraphError("empty graph descriptor");
  const auto open = text.find('(');
  const std::string name(detail::trim(text.substr(0, open)));
  std::string_view body;
  if (open != std::string_view::npos) {
    if (text.back() != ')') throw GraphError("unbalanced parentheses in '" + std::string(text) + "'");
    body = text.substr(open + 1, text.size() - open - 2);
  }

  if (name == "loop") {
    if (!detail::trim(body).empty()) throw GraphError("loop takes no arguments");
    return make_loop();
  }
  if (name == "srw") {
    auto args = detail::descriptor_args(body, true);
    detail::expect_args(name, args, 1);
    auto d = detail::parse_int(args[0]);
    if (d < 1) throw GraphError("srw needs d >= 1");
    return make_zd_srw(static_cast<std::size_t>(d));
  }
  if (name == "drift") {
    auto args = detail::descriptor_args(body, true);
    detail::expect_args(name, args, 2);
    return make_drift(parse_rational(args[0]), parse_rational(args[1]));
  }
  if (name == "tree") {
    auto args = detail::descriptor_args(body, true);
    detail::expect_args(name, args, 1);
    return make_tree_srw(detail::parse_int(args[0]));
  }
  if (name == "zbox") {
    auto args = detail::descriptor_args(body, true);
    detail::expect_args(name, args, 2);
    auto d = detail::parse_int(args[0]);
    if (d < 1 || d > 3) throw GraphError("zbox supports 1 <= d <= 3");
    auto side = detail::parse_int(args[1]);
    if (side < 1 || side > 100) throw GraphError("zbox side must be in 1..100");
    return make_zd_box(static_cast<std::size_t>(d), side);
  }
  if (name == "cross" || name == "box") {
    auto args = detail::descriptor_args(body, true);
    detail::expect_args(name, args, 2);
    auto a = parse_graph(args[0]);
    auto b = parse_graph(args[1]);
    return name == "cross" ? cross_product(a, b) : box_product(a, b);
  }
  if (name == "zd") {
    auto args = detail::descriptor_args(body, false);
    if (args.size() < 2) throw GraphError("zd needs a dimension and at least one step");
    auto d = detail::parse_int(args[0]);
    if (d < 1) throw GraphError("zd needs d >= 1");
    std::vector<Step> steps;
    for (std::size_t i = 1; i < args.size(); ++i) {
      auto colon = args[i].rfind(':');
      if (colon == std::string_view::npos) throw GraphError("zd step must look like s1,...,sd:w");
      Step s;
      for (auto c : detail::split_top(args[i].substr(0, colon), ',')) s.delta.push_back(detail::parse_int(c));
      s.weight = parse_rational(args[i].substr(colon + 1));
      steps.push_back(std::move(s));
    }
    return make_zd(static_cast<std::size_t>(d), std::move(steps));
  }
  if (name == "explicit") {
    auto args = detail::descriptor_args(body, false);
    if (args.empty()) throw GraphError("explicit needs a vertex count");
    auto n = detail::parse_int(args[0]);
    if (n < 1) throw GraphError("explicit needs n >= 1");
    std::vector<ExplicitEdge> edges;
    for (std::size_t i = 1; i < args.size(); ++i) {
      auto gt = args[i].find('>');
      auto colon = args[i].rfind(':');
      if (gt == std::string_view::npos || colon == std::string_view::npos || colon < gt)
        throw GraphError("explicit edge must look like a>b:w");
      edges.push_back(ExplicitEdge{detail::parse_int(args[i].substr(0, gt)),
                                   detail::parse_int(args[i].substr(gt + 1, colon - gt - 1)),
                                   parse_rational(args[i].substr(colon + 1))});
    }
    return make_explicit(static_cast<std::size_t>(n), edges);
  }
  throw GraphError("unknown graph family '" + name + "'");
}

}  // namespace brwlab
