#pragma once

// Lazily materialised, densely indexed view of a (possibly infinite) graph.
// Vertices are interned on first contact and their out-edges cached, so hot
// loops work on integer indices.  An Atlas is not thread-safe; each replica
// or computation owns its own.

#include "brwlab/graph.hpp"

namespace brwlab {

class Atlas {
 public:
  struct Arc {
    std::uint32_t to;
    double weight;
    double cumulative;  // running sum of weights up to and including this arc
  };

  explicit Atlas(GraphPtr graph, std::size_t vertex_budget = 50'000'000)
      : graph_(std::move(graph)), budget_(vertex_budget) {}

  const WeightedGraph& graph() const noexcept { return *graph_; }
  const GraphPtr& graph_ptr() const noexcept { return graph_; }
  std::size_t size() const noexcept { return vertices_.size(); }

  std::uint32_t intern(const VertexId& v) {
    auto it = index_.find(v);
    if (it != index_.end()) return it->second;
    graph_->require_vertex(v);
    return add(v);
  }

  std::optional<std::uint32_t> find(const VertexId& v) const {
    auto it = index_.find(v);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const VertexId& vertex(std::uint32_t i) const { return vertices_[i]; }

  /// Out-arcs of vertex i, materialising the targets if necessary.
  const std::vector<Arc>& arcs(std::uint32_t i) {
    if (!expanded_[i]) expand(i);
    return arcs_[i];
  }

  /// k(x) for vertex i.
  double total_weight(std::uint32_t i) {
    const auto& a = arcs(i);
    return a.empty() ? 0.0 : a.back().cumulative;
  }

 private:
  std::uint32_t add(const VertexId& v) {
    if (vertices_.size() >= budget_)
      throw GraphError("vertex budget exhausted while exploring " + graph_->describe());
    const auto i = static_cast<std::uint32_t>(vertices_.size());
    index_.emplace(v, i);
    vertices_.push_back(v);
    arcs_.emplace_back();
    expanded_.push_back(0);
    return i;
  }

  void expand(std::uint32_t i) {
    auto edges = graph_->out_edges(vertices_[i]);
    std::vector<Arc> arcs;
    arcs.reserve(edges.size());
    double acc = 0.0;
    for (auto& e : edges) {
      std::uint32_t j;
      auto it = index_.find(e.to);
      j = it != index_.end() ? it->second : add(e.to);
      acc += e.weight;
      arcs.push_back(Arc{j, e.weight, acc});
    }
    arcs_[i] = std::move(arcs);
    expanded_[i] = 1;
  }

  GraphPtr graph_;
  std::size_t budget_;
  std::vector<VertexId> vertices_;
  std::unordered_map<VertexId, std::uint32_t, VertexIdHash> index_;
  std::vector<std::vector<Arc>> arcs_;
  std::vector<char> expanded_;
};

}  // namespace brwlab
