#pragma once

// Finite restrictions of a weighted graph: _n mu = mu restricted to X_n x X_n.

#include "brwlab/graph.hpp"

#include <deque>

namespace brwlab {

/// Restriction of the kernel to `vertices`, in the given order.
inline KernelMatrix kernel_on(const WeightedGraph& g, const std::vector<VertexId>& vertices) {
  KernelMatrix m;
  m.vertices = vertices;
  std::unordered_map<VertexId, std::uint32_t, VertexIdHash> index;
  index.reserve(vertices.size());
  for (std::uint32_t i = 0; i < vertices.size(); ++i) {
    g.require_vertex(vertices[i]);
    if (!index.emplace(vertices[i], i).second) throw GraphError("duplicate vertex in restriction");
  }
  m.row_start.reserve(vertices.size() + 1);
  for (const auto& x : vertices) {
    std::vector<std::pair<std::uint32_t, double>> row;
    for (const auto& e : g.out_edges(x)) {
      auto it = index.find(e.to);
      if (it != index.end()) row.emplace_back(it->second, e.weight);
    }
    std::sort(row.begin(), row.end());
    for (auto [c, w] : row) {
      m.columns.push_back(c);
      m.values.push_back(w);
    }
    m.row_start.push_back(m.columns.size());
  }
  m.strongly_connected = strongly_connected(m);
  return m;
}

/// Kernel of a finite graph over its canonical vertex order.
inline KernelMatrix finite_kernel(const WeightedGraph& g) { return kernel_on(g, g.vertices()); }

namespace detail {

inline std::unordered_map<VertexId, int, VertexIdHash> directed_distances(const WeightedGraph& g,
                                                                         const VertexId& center,
                                                                         int radius, bool backward) {
  std::unordered_map<VertexId, int, VertexIdHash> dist;
  dist.emplace(center, 0);
  std::deque<VertexId> queue{center};
  while (!queue.empty()) {
    VertexId u = std::move(queue.front());
    queue.pop_front();
    const int du = dist.at(u);
    if (du == radius) continue;
    for (auto& e : backward ? g.in_edges(u) : g.out_edges(u)) {
      if (dist.emplace(e.to, du + 1).second) queue.push_back(std::move(e.to));
    }
  }
  return dist;
}

}  // namespace detail

/// Vertices reachable from `center` in <= radius directed steps AND able to
/// reach it in <= radius steps, ordered by two-sided distance then code.
/// On non-oriented graphs this is the usual graph ball.
inline std::vector<VertexId> ball_vertices(const WeightedGraph& g, const VertexId& center, int radius) {
  if (radius < 0) throw GraphError("radius must be nonnegative");
  g.require_vertex(center);
  auto fwd = detail::directed_distances(g, center, radius, false);
  std::vector<std::pair<int, VertexId>> keyed;
  if (g.oriented()) {
    auto bwd = detail::directed_distances(g, center, radius, true);
    for (auto& [v, d] : fwd) {
      auto it = bwd.find(v);
      if (it != bwd.end()) keyed.emplace_back(std::max(d, it->second), v);
    }
  } else {
    for (auto& [v, d] : fwd) keyed.emplace_back(d, v);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<VertexId> out;
  out.reserve(keyed.size());
  for (auto& [d, v] : keyed) out.push_back(std::move(v));
  return out;
}

/// _n mu on the ball of radius n around `center`.
inline KernelMatrix ball_truncation(const WeightedGraph& g, const VertexId& center, int radius) {
  return kernel_on(g, ball_vertices(g, center, radius));
}

}  // namespace brwlab
