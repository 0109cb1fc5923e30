#pragma once

// Bernoulli bond percolation on finite non-oriented graphs, its clusters,
// and the strong critical parameter of the branching walk restricted to
// them (weights 1_{open} mu).

#include "brwlab/brw.hpp"
#include "brwlab/kernel.hpp"
#include "brwlab/spectral.hpp"

#include <boost/pending/disjoint_sets.hpp>

namespace brwlab {

class PercolationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PercolationSample {
  GraphPtr base;
  double p = 0.0;
  std::uint64_t seed = 0;
  /// All vertices of the base graph, canonical order.
  std::vector<VertexId> vertices;
  /// Undirected edges {x, y}, x <= y, canonical order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<char> open;
  /// Open edges in both directions, for restrict_to_edges.
  EdgeSet open_set;

  std::size_t open_count() const { return static_cast<std::size_t>(std::count(open.begin(), open.end(), 1)); }
  double open_fraction() const {
    return edges.empty() ? 0.0 : static_cast<double>(open_count()) / static_cast<double>(edges.size());
  }
};

namespace detail {

/// Stream key of the undirected edge {x, y}: depends only on the two vertex
/// codes, so samples at different p (or on nested boxes) share uniforms.
inline std::uint64_t edge_key(std::uint64_t seed, const VertexId& x, const VertexId& y) {
  std::uint64_t h = derive_seed(seed, {x.code.size()});
  for (auto c : x.code) h = derive_seed(h, {key_of(c)});
  h = derive_seed(h, {y.code.size()});
  for (auto c : y.code) h = derive_seed(h, {key_of(c)});
  return h;
}

}  // namespace detail

/// Keeps each undirected edge of a finite non-oriented graph independently
/// with probability p.
inline PercolationSample percolate(GraphPtr graph, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw PercolationError("p must be in [0, 1]");
  if (!graph->vertex_count()) throw PercolationError("percolation needs a finite graph: " + graph->describe());
  if (graph->oriented()) throw PercolationError("percolation needs a non-oriented graph: " + graph->describe());
  PercolationSample s;
  s.p = p;
  s.seed = seed;
  s.vertices = graph->vertices();
  std::sort(s.vertices.begin(), s.vertices.end());
  std::unordered_map<VertexId, std::uint32_t, VertexIdHash> index;
  for (std::uint32_t i = 0; i < s.vertices.size(); ++i) index.emplace(s.vertices[i], i);
  for (std::uint32_t i = 0; i < s.vertices.size(); ++i)
    for (const auto& e : graph->out_edges(s.vertices[i])) {
      auto it = index.find(e.to);
      if (it != index.end() && i <= it->second && e.weight > 0.0) s.edges.emplace_back(i, it->second);
    }
  std::sort(s.edges.begin(), s.edges.end());
  s.edges.erase(std::unique(s.edges.begin(), s.edges.end()), s.edges.end());
  s.open.resize(s.edges.size());
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    const auto& x = s.vertices[s.edges[e].first];
    const auto& y = s.vertices[s.edges[e].second];
    s.open[e] = to_unit(detail::edge_key(seed, x, y)) < p;
    if (s.open[e]) {
      s.open_set.emplace(x, y);
      s.open_set.emplace(y, x);
    }
  }
  s.base = std::move(graph);
  return s;
}

struct ClusterSet {
  /// Component of each vertex (index into components).
  std::vector<std::uint32_t> component_of;
  /// Vertex indices of each component, ascending; components are ordered by
  /// their smallest vertex.
  std::vector<std::vector<std::uint32_t>> components;
  std::size_t largest = 0;

  std::size_t size(std::size_t c) const { return components.at(c).size(); }
  /// Fraction of vertices in the largest component.
  double theta() const {
    if (component_of.empty()) return 0.0;
    return static_cast<double>(components[largest].size()) / static_cast<double>(component_of.size());
  }
};

/// Connected components of the open subgraph (union-find).
inline ClusterSet clusters(const PercolationSample& s) {
  const std::size_t n = s.vertices.size();
  std::vector<std::size_t> rank(n), parent(n);
  boost::disjoint_sets<std::size_t*, std::size_t*> ds(rank.data(), parent.data());
  for (std::size_t v = 0; v < n; ++v) ds.make_set(v);
  for (std::size_t e = 0; e < s.edges.size(); ++e)
    if (s.open[e]) ds.union_set(s.edges[e].first, s.edges[e].second);
  ClusterSet c;
  c.component_of.resize(n);
  std::unordered_map<std::size_t, std::uint32_t> id;
  for (std::size_t v = 0; v < n; ++v) {
    const auto root = ds.find_set(v);
    auto [it, fresh] = id.emplace(root, static_cast<std::uint32_t>(c.components.size()));
    if (fresh) c.components.emplace_back();
    c.component_of[v] = it->second;
    c.components[it->second].push_back(static_cast<std::uint32_t>(v));
  }
  for (std::size_t k = 1; k < c.components.size(); ++k)
    if (c.components[k].size() > c.components[c.largest].size()) c.largest = k;
  return c;
}

namespace detail {

/// Rows up to which a stalled power iteration is redone densely.
inline constexpr std::size_t kDenseFallbackRows = 2048;

/// Power iteration, redone densely when it stalls on a small cluster (two
/// weakly joined lobes give a near-degenerate second eigenvalue).
inline SpectralEstimate cluster_eigenvalue(const KernelMatrix& m, const PowerIterationOptions& opt) {
  auto est = pf_eigenvalue(m, opt);
  if (est.converged || m.size() > kDenseFallbackRows) return est;
  auto dense = pf_eigenvalue_dense(m);
  dense.iterations = est.iterations;
  return dense;
}

}  // namespace detail

/// Strong critical parameter (1 / PF eigenvalue) of the open subgraph
/// restricted to one cluster.
inline SpectralEstimate lambda_s_on_cluster(const PercolationSample& s, const ClusterSet& c, std::size_t cluster,
                                            const PowerIterationOptions& opt = {}) {
  if (cluster >= c.components.size() || c.components[cluster].empty())
    throw PercolationError("no such cluster");
  auto restricted = restrict_to_edges(s.base, s.open_set);
  std::vector<VertexId> vs;
  for (auto v : c.components[cluster]) vs.push_back(s.vertices[v]);
  return detail::cluster_eigenvalue(kernel_on(*restricted, vs), opt);
}

/// Same quantity for the whole base graph.
inline SpectralEstimate lambda_s_full(const PercolationSample& s, const PowerIterationOptions& opt = {}) {
  return detail::cluster_eigenvalue(kernel_on(*s.base, s.vertices), opt);
}

struct ConvergenceRow {
  int n = 0;
  double p_n = 0.0;
  std::int64_t box_side = 0;
  std::size_t largest_cluster_size = 0;
  double lambda_s_largest = 0.0;
  double lambda_s_min = 0.0;
  double lambda_s_full = 0.0;
  std::uint64_t seed = 0;

  double gap() const { return lambda_s_largest - lambda_s_full; }
};

/// p_n = 1 - 2^-n.
inline double dyadic_retention(int n) { return 1.0 - std::ldexp(1.0, -n); }

/// Sum of 1 - p_n over the sequence.
inline double defect_sum(const std::vector<std::pair<int, double>>& ps) {
  double s = 0.0;
  for (const auto& [n, p] : ps) s += 1.0 - p;
  return s;
}

/// One independent percolation per (seed, n); rows ordered by seed, then n.
/// Clusters without any edge weight contribute lambda_s = inf.
inline std::vector<ConvergenceRow> convergence_experiment(const GraphPtr& box, std::int64_t box_side,
                                                          const std::vector<std::pair<int, double>>& ps,
                                                          const std::vector<std::uint64_t>& seeds,
                                                          const PowerIterationOptions& opt = {}) {
  for (const auto& [n, p] : ps)
    if (!(p > 0.0 && p <= 1.0)) throw PercolationError("p_n must be in (0, 1]");
  const auto base = percolate(box, 1.0, 0);
  const auto full = lambda_s_full(base, opt);
  if (!full.converged) throw SpectralError("power iteration did not converge on the full box");
  std::vector<ConvergenceRow> rows(seeds.size() * ps.size());
  parallel_for(rows.size(), [&](std::size_t r) {
    const auto seed = seeds[r / ps.size()];
    const auto [n, p] = ps[r % ps.size()];
    const auto s = percolate(box, p, derive_seed(seed, {static_cast<std::uint64_t>(n)}));
    const auto c = clusters(s);
    ConvergenceRow row;
    row.n = n;
    row.p_n = p;
    row.box_side = box_side;
    row.seed = seed;
    row.largest_cluster_size = c.size(c.largest);
    row.lambda_s_full = full.inverse_radius;
    row.lambda_s_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c.components.size(); ++k) {
      const auto& v0 = s.vertices[c.components[k][0]];
      if (c.size(k) == 1 && !s.open_set.contains({v0, v0}) && k != c.largest) continue;
      const auto e = lambda_s_on_cluster(s, c, k, opt);
      if (!e.converged) throw SpectralError("power iteration did not converge on a cluster");
      row.lambda_s_min = std::min(row.lambda_s_min, e.inverse_radius);
      if (k == c.largest) row.lambda_s_largest = e.inverse_radius;
    }
    rows[r] = row;
  });
  return rows;
}

inline void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows) {
  csv_row(os, "n", "p_n", "box_side", "largest_cluster_size", "lambda_s_largest", "lambda_s_min_over_clusters",
          "lambda_s_full_box", "seed");
  for (const auto& r : rows)
    csv_row(os, r.n, r.p_n, r.box_side, r.largest_cluster_size, r.lambda_s_largest, r.lambda_s_min,
            r.lambda_s_full, r.seed);
}

}  // namespace brwlab
