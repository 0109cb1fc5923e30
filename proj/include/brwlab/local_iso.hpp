#pragma once

// Local isomorphisms f: X -> I with sum_{z in f^-1(i)} mu(x, z) = nu(f(x), i).
// Such a map transports kernel powers, hence expected occupancies, exactly.

#include "brwlab/graph.hpp"

#include <functional>

namespace brwlab {

struct LocalIsomorphism {
  GraphPtr source;
  GraphPtr target;
  std::function<VertexId(const VertexId&)> map;
};

/// Height with respect to the end of the ray /1/1/1/...: the root has height
/// 0, one neighbour of every vertex sits one level lower (towards the end)
/// and the other r-1 sit one level higher.
inline std::int64_t horocycle_height(const VertexId& tree_vertex) {
  const auto k = tree_vertex.code.at(0);
  std::int64_t on_ray = 0;
  while (on_ray < k && tree_vertex.code[static_cast<std::size_t>(on_ray) + 1] == 1) ++on_ray;
  return k - 2 * on_ray;
}

/// Projection of the tree walk onto horocycles: a walk on Z with
/// p(a, a+1) = 1 - 1/r and p(a, a-1) = 1/r.
inline LocalIsomorphism horocycle_map(const GraphPtr& tree) {
  auto t = std::dynamic_pointer_cast<const TreeGraph>(tree);
  if (!t) throw GraphError("horocycle map needs a tree-srw graph, got " + tree->describe());
  const auto r = t->degree();
  return LocalIsomorphism{tree, make_drift(Rational(r - 1, r), Rational(1, r)),
                          [](const VertexId& v) { return VertexId{horocycle_height(v)}; }};
}

/// Projection of a Z^d kernel onto coordinate `axis` (1-based).  Only
/// nearest-neighbour axis marginals are accepted.
inline LocalIsomorphism coordinate_projection(const GraphPtr& zd, std::size_t axis) {
  auto g = std::dynamic_pointer_cast<const ZdKernelGraph>(zd);
  if (!g) throw GraphError("coordinate projection needs a Z^d kernel, got " + zd->describe());
  if (axis < 1 || axis > g->dimension()) throw GraphError("axis out of range");
  Rational p(0), q(0), hold(0);
  for (const auto& s : g->steps()) {
    const auto c = s.delta[axis - 1];
    if (c == 1) p += s.weight;
    else if (c == -1) q += s.weight;
    else if (c == 0) hold += s.weight;
    else throw GraphError("axis marginal has support outside {-1, 0, 1}");
  }
  std::vector<Step> steps{{{1}, p}, {{-1}, q}, {{0}, hold}};
  GraphPtr target = std::make_shared<ZdKernelGraph>(1, std::move(steps));
  const auto i = axis - 1;
  return LocalIsomorphism{zd, std::move(target), [i](const VertexId& v) { return VertexId{v.code.at(i)}; }};
}

using ExactDistribution = std::unordered_map<VertexId, Rational, VertexIdHash>;

/// mu^(n)(x, .) for n = 0..steps, as exact rationals (sum over all paths).
inline std::vector<ExactDistribution> exact_powers(const WeightedGraph& g, const VertexId& x, int steps) {
  std::vector<ExactDistribution> powers;
  powers.push_back(ExactDistribution{{x, Rational(1)}});
  for (int n = 0; n < steps; ++n) {
    ExactDistribution next;
    for (const auto& [v, mass] : powers.back())
      for (const auto& e : g.out_edges(v)) next[e.to] += mass * e.exact;
    std::erase_if(next, [](const auto& kv) { return kv.second == Rational(0); });
    powers.push_back(std::move(next));
  }
  return powers;
}

struct IsomorphismViolation {
  VertexId source;
  VertexId target_vertex;
  int power = 0;
  Rational lhs{0};
  Rational rhs{0};
};

/// Checks sum_{z in f^-1(i)} mu^(n)(x, z) == nu^(n)(f(x), i) exactly for
/// every x in `sources`, every n <= max_power and every i reached by either
/// side.  Returns the first violation, if any.
inline std::optional<IsomorphismViolation> verify_local_isomorphism(const LocalIsomorphism& iso,
                                                                    const std::vector<VertexId>& sources,
                                                                    int max_power) {
  for (const auto& x : sources) {
    auto lhs = exact_powers(*iso.source, x, max_power);
    auto rhs = exact_powers(*iso.target, iso.map(x), max_power);
    for (int n = 0; n <= max_power; ++n) {
      ExactDistribution projected;
      for (const auto& [z, mass] : lhs[static_cast<std::size_t>(n)]) projected[iso.map(z)] += mass;
      ExactDistribution keys = projected;
      for (const auto& [i, mass] : rhs[static_cast<std::size_t>(n)]) keys.emplace(i, Rational(0));
      for (const auto& [i, unused] : keys) {
        (void)unused;
        auto a = projected.contains(i) ? projected.at(i) : Rational(0);
        const auto& r = rhs[static_cast<std::size_t>(n)];
        auto b = r.contains(i) ? r.at(i) : Rational(0);
        if (a != b) return IsomorphismViolation{x, i, n, a, b};
      }
    }
  }
  return std::nullopt;
}

}  // namespace brwlab
