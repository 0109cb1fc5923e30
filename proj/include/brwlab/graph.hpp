#pragma once

// Weighted graphs with bounded geometry.
//
// A graph is a weight kernel mu(x, y) >= 0 on a vertex set, with an edge
// (x, y) present exactly when mu(x, y) > 0.  Infinite families (Z^d kernels,
// homogeneous trees, their products) are generator-backed: vertices exist
// only as codes and neighbours are enumerated on demand.  Every weight is
// carried both as a double and as an exact rational.

#include "brwlab/vertex.hpp"

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace brwlab {

struct Edge {
  VertexId to;
  double weight = 0.0;
  Rational exact{0};
};

enum class Family { explicit_graph, zd_kernel, tree_srw, cross_product, box_product, restricted };

/// Finite nonnegative matrix over an ordered vertex list, stored as CSR rows.
///
/// When `class_sizes` is non-empty the matrix is an equitable quotient: row i
/// stands for a class of `class_sizes[i]` vertices (represented by
/// `vertices[i]`) and entry (i, j) is the total weight from any member of
/// class i into class j.
struct KernelMatrix {
  std::vector<VertexId> vertices;
  std::vector<std::size_t> row_start{0};
  std::vector<std::uint32_t> columns;
  std::vector<double> values;
  bool strongly_connected = false;
  std::vector<std::uint64_t> class_sizes;

  std::size_t size() const noexcept { return vertices.size(); }
  std::size_t nonzeros() const noexcept { return values.size(); }

  std::uint64_t represented_vertices() const noexcept {
    if (class_sizes.empty()) return vertices.size();
    std::uint64_t n = 0;
    for (auto c : class_sizes) n += c;
    return n;
  }

  double entry(std::size_t i, std::size_t j) const {
    for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p)
      if (columns[p] == j) return values[p];
    return 0.0;
  }

  double row_sum(std::size_t i) const {
    double s = 0.0;
    for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) s += values[p];
    return s;
  }

  /// y = M x
  void apply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < size(); ++i) {
      double acc = 0.0;
      for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) acc += values[p] * x[columns[p]];
      y[i] = acc;
    }
  }

  /// y = M^T x
  void apply_transpose(std::span<const double> x, std::span<double> y) const {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) y[columns[p]] += values[p] * x[i];
  }

  std::optional<std::size_t> index_of(const VertexId& v) const {
    auto it = std::find(vertices.begin(), vertices.end(), v);
    if (it == vertices.end()) return std::nullopt;
    return static_cast<std::size_t>(it - vertices.begin());
  }

  std::vector<std::vector<double>> dense() const {
    std::vector<std::vector<double>> m(size(), std::vector<double>(size(), 0.0));
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) m[i][columns[p]] = values[p];
    return m;
  }
};

/// Irreducibility of a CSR pattern: everything reachable from row 0 forwards
/// and backwards.  A single vertex counts only if it carries a self-loop.
inline bool strongly_connected(const KernelMatrix& m) {
  const std::size_t n = m.size();
  if (n == 0) return false;
  if (n == 1) return m.entry(0, 0) > 0.0;
  std::vector<std::vector<std::uint32_t>> reverse(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = m.row_start[i]; p < m.row_start[i + 1]; ++p)
      if (m.values[p] > 0.0) reverse[m.columns[p]].push_back(static_cast<std::uint32_t>(i));
  auto reach_all = [&](auto&& next) {
    std::vector<char> seen(n, 0);
    std::vector<std::uint32_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      next(u, [&](std::uint32_t v) {
        if (!seen[v]) {
          seen[v] = 1;
          ++count;
          stack.push_back(v);
        }
      });
    }
    return count == n;
  };
  const bool fwd = reach_all([&](std::uint32_t u, auto&& visit) {
    for (std::size_t p = m.row_start[u]; p < m.row_start[u + 1]; ++p)
      if (m.values[p] > 0.0) visit(m.columns[p]);
  });
  if (!fwd) return false;
  return reach_all([&](std::uint32_t u, auto&& visit) {
    for (auto v : reverse[u]) visit(v);
  });
}

class WeightedGraph {
 public:
  virtual ~WeightedGraph() = default;

  virtual Family family() const = 0;
  /// Descriptor text that parse_graph() maps back to an equal graph.
  virtual std::string describe() const = 0;

  virtual bool contains(const VertexId& v) const = 0;
  /// Edges (x, y) with mu(x, y) > 0, in a fixed deterministic order.
  virtual std::vector<Edge> out_edges(const VertexId& x) const = 0;
  /// Edges (z, x) with mu(z, x) > 0; Edge::to holds the source z.
  virtual std::vector<Edge> in_edges(const VertexId& x) const = 0;

  virtual VertexId origin() const = 0;
  virtual std::string format(const VertexId& v) const = 0;
  virtual VertexId parse(std::string_view text) const = 0;
  /// Length of the vertex code that starts at the front of `code`.
  virtual std::size_t code_length(std::span<const std::int64_t> code) const = 0;

  virtual std::size_t degree_bound() const = 0;
  /// K with k(x) <= K for all x.
  virtual double weight_bound() const = 0;
  virtual bool stochastic() const = 0;
  /// True when some edge (x, y) has no reverse edge (y, x).
  virtual bool oriented() const = 0;

  virtual std::optional<std::size_t> vertex_count() const { return std::nullopt; }
  /// All vertices of a finite graph, in canonical order.
  virtual std::vector<VertexId> vertices() const {
    throw GraphError("vertex enumeration requires a finite graph: " + describe());
  }

  /// Equitable quotient of the ball B(center, radius) when the family has
  /// enough symmetry to provide one; otherwise nullopt.
  virtual std::optional<KernelMatrix> ball_quotient(const VertexId& /*center*/,
                                                    int /*radius*/) const {
    return std::nullopt;
  }

  void require_vertex(const VertexId& v) const {
    if (!contains(v)) throw GraphError("not a vertex of " + describe());
  }

  double weight(const VertexId& x, const VertexId& y) const {
    for (const auto& e : out_edges(x))
      if (e.to == y) return e.weight;
    return 0.0;
  }

  Rational exact_weight(const VertexId& x, const VertexId& y) const {
    for (const auto& e : out_edges(x))
      if (e.to == y) return e.exact;
    return Rational(0);
  }

  /// k(x) = sum_y mu(x, y).
  double total_weight(const VertexId& x) const {
    double k = 0.0;
    for (const auto& e : out_edges(x)) k += e.weight;
    return k;
  }
};

using GraphPtr = std::shared_ptr<const WeightedGraph>;

// ---------------------------------------------------------------------------
// Explicit finite graphs

struct ExplicitEdge {
  std::int64_t from;
  std::int64_t to;
  Rational weight;
};

class ExplicitGraph final : public WeightedGraph {
 public:
  /// Integer-labelled graph on {0, ..., n-1}.
  ExplicitGraph(std::size_t n, const std::vector<ExplicitEdge>& edges) {
    if (n == 0) throw GraphError("explicit graph needs at least one vertex");
    for (std::size_t i = 0; i < n; ++i) add_vertex(VertexId{static_cast<std::int64_t>(i)});
    for (const auto& e : edges) {
      if (e.from < 0 || e.to < 0 || static_cast<std::size_t>(e.from) >= n ||
          static_cast<std::size_t>(e.to) >= n)
        throw GraphError("edge endpoint out of range");
      add_edge(static_cast<std::uint32_t>(e.from), static_cast<std::uint32_t>(e.to), e.weight);
    }
    description_ = describe_edges(n, edges);
    finish();
  }

  /// Induced subgraph of `parent` on the given vertices (codes and text form
  /// inherited from the parent).
  ExplicitGraph(GraphPtr parent, const std::vector<VertexId>& vertices, std::string description)
      : parent_(std::move(parent)), description_(std::move(description)) {
    if (vertices.empty()) throw GraphError("induced subgraph needs at least one vertex");
    for (const auto& v : vertices) {
      parent_->require_vertex(v);
      if (index_.contains(v)) throw GraphError("duplicate vertex in induced subgraph");
      add_vertex(v);
    }
    for (std::uint32_t i = 0; i < verts_.size(); ++i) {
      for (const auto& e : parent_->out_edges(verts_[i])) {
        auto it = index_.find(e.to);
        if (it != index_.end()) add_edge(i, it->second, e.exact, e.weight);
      }
    }
    finish();
  }

  Family family() const override { return Family::explicit_graph; }
  std::string describe() const override { return description_; }

  bool contains(const VertexId& v) const override { return index_.contains(v); }

  std::vector<Edge> out_edges(const VertexId& x) const override {
    return out_[index(x)];
  }
  std::vector<Edge> in_edges(const VertexId& x) const override { return in_[index(x)]; }

  VertexId origin() const override { return verts_.front(); }

  std::string format(const VertexId& v) const override {
    if (parent_) return parent_->format(v);
    return std::to_string(v.code.at(0));
  }
  VertexId parse(std::string_view text) const override {
    VertexId v = parent_ ? parent_->parse(text) : VertexId{detail::parse_int(text)};
    require_vertex(v);
    return v;
  }
  std::size_t code_length(std::span<const std::int64_t> code) const override {
    return parent_ ? parent_->code_length(code) : 1;
  }

  std::size_t degree_bound() const override { return degree_bound_; }
  double weight_bound() const override { return weight_bound_; }
  bool stochastic() const override { return stochastic_; }
  bool oriented() const override { return oriented_; }
  std::optional<std::size_t> vertex_count() const override { return verts_.size(); }
  std::vector<VertexId> vertices() const override { return verts_; }

  std::uint32_t index(const VertexId& v) const {
    auto it = index_.find(v);
    if (it == index_.end()) throw GraphError("not a vertex of " + description_);
    return it->second;
  }

 private:
  void add_vertex(VertexId v) {
    index_.emplace(v, static_cast<std::uint32_t>(verts_.size()));
    verts_.push_back(std::move(v));
    out_.emplace_back();
    in_.emplace_back();
  }

  void add_edge(std::uint32_t a, std::uint32_t b, Rational w, std::optional<double> wd = {}) {
    if (w < Rational(0)) throw GraphError("negative weight");
    if (w == Rational(0)) return;
    const double d = wd ? *wd : to_double(w);
    for (auto& e : out_[a]) {
      if (e.to == verts_[b]) {
        e.exact += w;
        e.weight = to_double(e.exact);
        for (auto& r : in_[b])
          if (r.to == verts_[a]) r = Edge{verts_[a], e.weight, e.exact};
        return;
      }
    }
    out_[a].push_back(Edge{verts_[b], d, w});
    in_[b].push_back(Edge{verts_[a], d, w});
  }

  void finish() {
    stochastic_ = true;
    oriented_ = false;
    for (std::size_t i = 0; i < verts_.size(); ++i) {
      double k = 0.0;
      for (const auto& e : out_[i]) k += e.weight;
      weight_bound_ = std::max(weight_bound_, k);
      degree_bound_ = std::max(degree_bound_, out_[i].size());
      if (std::abs(k - 1.0) > 1e-12) stochastic_ = false;
      for (const auto& e : out_[i]) {
        const auto& back = out_[index_.at(e.to)];
        if (std::none_of(back.begin(), back.end(), [&](const Edge& r) { return r.to == verts_[i]; }))
          oriented_ = true;
      }
    }
    degree_bound_ = std::max<std::size_t>(degree_bound_, 1);
  }

  static std::string describe_edges(std::size_t n, const std::vector<ExplicitEdge>& edges) {
    if (n == 1 && edges.size() == 1 && edges[0].from == 0 && edges[0].to == 0 && edges[0].weight == Rational(1))
      return "loop";
    std::string s = "explicit(" + std::to_string(n);
    for (const auto& e : edges)
      s += "; " + std::to_string(e.from) + ">" + std::to_string(e.to) + ":" + format_rational(e.weight);
    return s + ")";
  }

  GraphPtr parent_;
  std::string description_;
  std::vector<VertexId> verts_;
  std::unordered_map<VertexId, std::uint32_t, VertexIdHash> index_;
  std::vector<std::vector<Edge>> out_;
  std::vector<std::vector<Edge>> in_;
  std::size_t degree_bound_ = 0;
  double weight_bound_ = 0.0;
  bool stochastic_ = false;
  bool oriented_ = false;
};

// ---------------------------------------------------------------------------
// Translation-invariant kernels on Z^d

struct Step {
  std::vector<std::int64_t> delta;
  Rational weight;
};

class ZdKernelGraph final : public WeightedGraph {
 public:
  ZdKernelGraph(std::size_t dim, std::vector<Step> steps, std::string description = {})
      : dim_(dim), description_(std::move(description)) {
    if (dim == 0) throw GraphError("Z^d kernel needs d >= 1");
    std::map<std::vector<std::int64_t>, Rational> merged;
    for (auto& s : steps) {
      if (s.delta.size() != dim) throw GraphError("step dimension does not match d");
      if (s.weight < Rational(0)) throw GraphError("negative weight");
      if (s.weight == Rational(0)) continue;
      merged[s.delta] += s.weight;
    }
    if (merged.empty()) throw GraphError("Z^d kernel needs at least one step of positive weight");
    Rational total(0);
    for (auto& [delta, w] : merged) {
      steps_.push_back(Step{delta, w});
      total += w;
    }
    total_ = total;
    stochastic_ = total == Rational(1);
    oriented_ = false;
    for (const auto& s : steps_) {
      std::vector<std::int64_t> neg(s.delta);
      for (auto& c : neg) c = -c;
      if (!merged.contains(neg)) oriented_ = true;
    }
    if (description_.empty()) {
      description_ = "zd(" + std::to_string(dim_);
      for (const auto& s : steps_) {
        description_ += "; ";
        for (std::size_t i = 0; i < dim_; ++i)
          description_ += (i ? "," : "") + std::to_string(s.delta[i]);
        description_ += ":" + format_rational(s.weight);
      }
      description_ += ")";
    }
  }

  Family family() const override { return Family::zd_kernel; }
  std::string describe() const override { return description_; }
  std::size_t dimension() const noexcept { return dim_; }
  const std::vector<Step>& steps() const noexcept { return steps_; }

  bool contains(const VertexId& v) const override { return v.code.size() == dim_; }

  std::vector<Edge> out_edges(const VertexId& x) const override {
    require_vertex(x);
    std::vector<Edge> out;
    out.reserve(steps_.size());
    for (const auto& s : steps_) {
      VertexId y = x;
      for (std::size_t i = 0; i < dim_; ++i) y.code[i] += s.delta[i];
      out.push_back(Edge{std::move(y), to_double(s.weight), s.weight});
    }
    return out;
  }

  std::vector<Edge> in_edges(const VertexId& x) const override {
    require_vertex(x);
    std::vector<Edge> in;
    in.reserve(steps_.size());
    for (const auto& s : steps_) {
      VertexId z = x;
      for (std::size_t i = 0; i < dim_; ++i) z.code[i] -= s.delta[i];
      in.push_back(Edge{std::move(z), to_double(s.weight), s.weight});
    }
    return in;
  }

  VertexId origin() const override { return VertexId(std::vector<std::int64_t>(dim_, 0)); }

  std::string format(const VertexId& v) const override {
    std::string s = "(";
    for (std::size_t i = 0; i < v.code.size(); ++i) s += (i ? "," : "") + std::to_string(v.code[i]);
    return s + ")";
  }

  VertexId parse(std::string_view text) const override {
    auto t = detail::trim(text);
    if (t.size() < 2 || t.front() != '(' || t.back() != ')')
      throw GraphError("Z^d vertex must look like (a,b,...): '" + std::string(text) + "'");
    VertexId v;
    for (auto part : detail::split_top(t.substr(1, t.size() - 2), ',')) v.code.push_back(detail::parse_int(part));
    require_vertex(v);
    return v;
  }

  std::size_t code_length(std::span<const std::int64_t>) const override { return dim_; }
  std::size_t degree_bound() const override { return steps_.size(); }
  double weight_bound() const override { return to_double(total_); }
  bool stochastic() const override { return stochastic_; }
  bool oriented() const override { return oriented_; }

 private:
  std::size_t dim_;
  std::string description_;
  std::vector<Step> steps_;
  Rational total_{0};
  bool stochastic_ = false;
  bool oriented_ = false;
};

// ---------------------------------------------------------------------------
// Simple random walk on the homogeneous tree of degree r
//
// Code layout: [k, c_1, ..., c_k] is the reduced word from the root, with
// c_1 in 1..r and c_i in 1..r-1 for i >= 2 (children never include the
// parent).  The root is [0].  The ray /1/1/1/... fixes an end.

class TreeGraph final : public WeightedGraph {
 public:
  explicit TreeGraph(std::int64_t degree) : r_(degree) {
    if (degree < 3) throw GraphError("tree degree must be >= 3");
  }

  Family family() const override { return Family::tree_srw; }
  std::string describe() const override { return "tree(" + std::to_string(r_) + ")"; }
  std::int64_t degree() const noexcept { return r_; }

  bool contains(const VertexId& v) const override {
    if (v.code.empty()) return false;
    const auto k = v.code[0];
    if (k < 0 || static_cast<std::size_t>(k) + 1 != v.code.size()) return false;
    for (std::int64_t i = 1; i <= k; ++i) {
      const auto limit = i == 1 ? r_ : r_ - 1;
      if (v.code[i] < 1 || v.code[i] > limit) return false;
    }
    return true;
  }

  std::vector<Edge> out_edges(const VertexId& x) const override {
    require_vertex(x);
    const Rational w(1, r_);
    const double wd = to_double(w);
    std::vector<Edge> out;
    out.reserve(static_cast<std::size_t>(r_));
    const auto k = x.code[0];
    if (k > 0) {
      VertexId parent(std::vector<std::int64_t>(x.code.begin(), x.code.end() - 1));
      parent.code[0] = k - 1;
      out.push_back(Edge{std::move(parent), wd, w});
    }
    const auto children = k == 0 ? r_ : r_ - 1;
    for (std::int64_t c = 1; c <= children; ++c) {
      VertexId child = x;
      child.code[0] = k + 1;
      child.code.push_back(c);
      out.push_back(Edge{std::move(child), wd, w});
    }
    return out;
  }

  std::vector<Edge> in_edges(const VertexId& x) const override { return out_edges(x); }

  VertexId origin() const override { return VertexId{0}; }

  std::string format(const VertexId& v) const override {
    if (v.code.at(0) == 0) return "/";
    std::string s;
    for (std::size_t i = 1; i < v.code.size(); ++i) s += "/" + std::to_string(v.code[i]);
    return s;
  }

  VertexId parse(std::string_view text) const override {
    auto t = detail::trim(text);
    if (t.empty() || t.front() != '/') throw GraphError("tree vertex must start with '/': '" + std::string(text) + "'");
    VertexId v{0};
    if (t != "/") {
      for (auto part : detail::split_top(t.substr(1), '/')) v.code.push_back(detail::parse_int(part));
      v.code[0] = static_cast<std::int64_t>(v.code.size()) - 1;
    }
    require_vertex(v);
    return v;
  }

  std::size_t code_length(std::span<const std::int64_t> code) const override {
    return static_cast<std::size_t>(code.front()) + 1;
  }

  std::size_t degree_bound() const override { return static_cast<std::size_t>(r_); }
  double weight_bound() const override { return 1.0; }
  bool stochastic() const override { return true; }
  bool oriented() const override { return false; }

  /// Level quotient of the ball around any center: by transitivity the ball
  /// looks the same from every vertex, and distance spheres form an
  /// equitable partition.
  std::optional<KernelMatrix> ball_quotient(const VertexId& center, int radius) const override {
    require_vertex(center);
    if (radius < 0) throw GraphError("radius must be nonnegative");
    KernelMatrix m;
    const auto n = static_cast<std::size_t>(radius) + 1;
    const double down = 1.0 / static_cast<double>(r_);
    const double up = static_cast<double>(r_ - 1) / static_cast<double>(r_);
    VertexId rep = center;
    std::uint64_t sphere = 1;
    for (std::size_t level = 0; level < n; ++level) {
      m.vertices.push_back(rep);
      m.class_sizes.push_back(sphere);
      if (level > 0) {
        m.columns.push_back(static_cast<std::uint32_t>(level - 1));
        m.values.push_back(down);
      }
      if (level + 1 < n) {
        m.columns.push_back(static_cast<std::uint32_t>(level + 1));
        m.values.push_back(level == 0 ? 1.0 : up);
      }
      m.row_start.push_back(m.columns.size());
      rep.code[0] += 1;
      rep.code.push_back(1);
      sphere *= static_cast<std::uint64_t>(level == 0 ? r_ : r_ - 1);
    }
    m.strongly_connected = radius > 0;
    return m;
  }

 private:
  std::int64_t r_;
};

// ---------------------------------------------------------------------------
// Products

class ProductGraph final : public WeightedGraph {
 public:
  enum class Kind { cross, box };

  ProductGraph(Kind kind, GraphPtr left, GraphPtr right)
      : kind_(kind), left_(std::move(left)), right_(std::move(right)) {
    if (!left_ || !right_) throw GraphError("product operand missing");
  }

  Family family() const override {
    return kind_ == Kind::cross ? Family::cross_product : Family::box_product;
  }
  std::string describe() const override {
    return std::string(kind_ == Kind::cross ? "cross(" : "box(") + left_->describe() + "; " +
           right_->describe() + ")";
  }

  const GraphPtr& left() const noexcept { return left_; }
  const GraphPtr& right() const noexcept { return right_; }

  VertexId pair(const VertexId& a, const VertexId& b) const {
    VertexId v = a;
    v.code.insert(v.code.end(), b.code.begin(), b.code.end());
    return v;
  }

  std::pair<VertexId, VertexId> split(const VertexId& v) const {
    if (v.code.empty()) throw GraphError("empty product vertex");
    const auto n = left_->code_length(v.code);
    if (n > v.code.size()) throw GraphError("malformed product vertex");
    return {VertexId(std::vector<std::int64_t>(v.code.begin(), v.code.begin() + static_cast<std::ptrdiff_t>(n))),
            VertexId(std::vector<std::int64_t>(v.code.begin() + static_cast<std::ptrdiff_t>(n), v.code.end()))};
  }

  bool contains(const VertexId& v) const override {
    if (v.code.empty()) return false;
    const auto n = left_->code_length(v.code);
    if (n >= v.code.size()) return false;
    auto [a, b] = split(v);
    return left_->contains(a) && right_->contains(b);
  }

  std::vector<Edge> out_edges(const VertexId& x) const override { return edges(x, false); }
  std::vector<Edge> in_edges(const VertexId& x) const override { return edges(x, true); }

  VertexId origin() const override { return pair(left_->origin(), right_->origin()); }

  std::string format(const VertexId& v) const override {
    auto [a, b] = split(v);
    return "[" + left_->format(a) + "|" + right_->format(b) + "]";
  }

  VertexId parse(std::string_view text) const override {
    auto t = detail::trim(text);
    if (t.size() < 3 || t.front() != '[' || t.back() != ']')
      throw GraphError("product vertex must look like [left|right]: '" + std::string(text) + "'");
    auto parts = detail::split_top(t.substr(1, t.size() - 2), '|');
    if (parts.size() != 2) throw GraphError("product vertex needs exactly one top-level '|'");
    return pair(left_->parse(parts[0]), right_->parse(parts[1]));
  }

  std::size_t code_length(std::span<const std::int64_t> code) const override {
    const auto n = left_->code_length(code);
    return n + right_->code_length(code.subspan(n));
  }

  std::size_t degree_bound() const override {
    return kind_ == Kind::cross ? left_->degree_bound() * right_->degree_bound()
                                : left_->degree_bound() + right_->degree_bound();
  }
  double weight_bound() const override {
    return kind_ == Kind::cross ? left_->weight_bound() * right_->weight_bound()
                                : left_->weight_bound() + right_->weight_bound();
  }
  bool stochastic() const override {
    return kind_ == Kind::cross && left_->stochastic() && right_->stochastic();
  }
  bool oriented() const override { return left_->oriented() || right_->oriented(); }

  std::optional<std::size_t> vertex_count() const override {
    auto a = left_->vertex_count();
    auto b = right_->vertex_count();
    if (!a || !b) return std::nullopt;
    return *a * *b;
  }

  std::vector<VertexId> vertices() const override {
    std::vector<VertexId> out;
    for (const auto& a : left_->vertices())
      for (const auto& b : right_->vertices()) out.push_back(pair(a, b));
    return out;
  }

 private:
  std::vector<Edge> edges(const VertexId& x, bool incoming) const {
    require_vertex(x);
    auto [a, b] = split(x);
    auto ea = incoming ? left_->in_edges(a) : left_->out_edges(a);
    auto eb = incoming ? right_->in_edges(b) : right_->out_edges(b);
    std::vector<Edge> out;
    if (kind_ == Kind::cross) {
      out.reserve(ea.size() * eb.size());
      for (const auto& u : ea)
        for (const auto& w : eb) out.push_back(Edge{pair(u.to, w.to), u.weight * w.weight, u.exact * w.exact});
      return out;
    }
    // Direct sum: mu_X(x,x1) 1{y=y1} + 1{x=x1} mu_Y(y,y1).  A pair of
    // self-loops lands on the same target and is merged.
    out.reserve(ea.size() + eb.size());
    for (const auto& u : ea) out.push_back(Edge{pair(u.to, b), u.weight, u.exact});
    for (const auto& w : eb) {
      VertexId target = pair(a, w.to);
      auto it = std::find_if(out.begin(), out.end(), [&](const Edge& e) { return e.to == target; });
      if (it != out.end()) {
        it->exact += w.exact;
        it->weight = to_double(it->exact);
      } else {
        out.push_back(Edge{std::move(target), w.weight, w.exact});
      }
    }
    return out;
  }

  Kind kind_;
  GraphPtr left_;
  GraphPtr right_;
};

// ---------------------------------------------------------------------------
// Restriction to an open edge set: weights 1{(x,y) open} mu(x,y)

using EdgeSet = std::unordered_set<std::pair<VertexId, VertexId>, VertexPairHash>;

class RestrictedGraph final : public WeightedGraph {
 public:
  RestrictedGraph(GraphPtr parent, EdgeSet open) : parent_(std::move(parent)), open_(std::move(open)) {
    for (const auto& [x, y] : open_) {
      if (!parent_->contains(x) || !parent_->contains(y) || parent_->weight(x, y) <= 0.0)
        throw GraphError("open edge is not an edge of the parent graph");
    }
    oriented_ = false;
    for (const auto& [x, y] : open_)
      if (!open_.contains({y, x})) oriented_ = true;
  }

  Family family() const override { return Family::restricted; }
  std::string describe() const override {
    return "restricted(" + parent_->describe() + "; " + std::to_string(open_.size()) + " open edges)";
  }
  const GraphPtr& parent() const noexcept { return parent_; }
  const EdgeSet& open_edges() const noexcept { return open_; }

  bool contains(const VertexId& v) const override { return parent_->contains(v); }

  std::vector<Edge> out_edges(const VertexId& x) const override {
    auto all = parent_->out_edges(x);
    std::erase_if(all, [&](const Edge& e) { return !open_.contains({x, e.to}); });
    return all;
  }
  std::vector<Edge> in_edges(const VertexId& x) const override {
    auto all = parent_->in_edges(x);
    std::erase_if(all, [&](const Edge& e) { return !open_.contains({e.to, x}); });
    return all;
  }

  VertexId origin() const override { return parent_->origin(); }
  std::string format(const VertexId& v) const override { return parent_->format(v); }
  VertexId parse(std::string_view text) const override { return parent_->parse(text); }
  std::size_t code_length(std::span<const std::int64_t> code) const override {
    return parent_->code_length(code);
  }
  std::size_t degree_bound() const override { return parent_->degree_bound(); }
  double weight_bound() const override { return parent_->weight_bound(); }
  bool stochastic() const override {
    return parent_->stochastic() && open_.size() == parent_edge_count();
  }
  bool oriented() const override { return oriented_; }
  std::optional<std::size_t> vertex_count() const override { return parent_->vertex_count(); }
  std::vector<VertexId> vertices() const override { return parent_->vertices(); }

 private:
  std::size_t parent_edge_count() const {
    auto n = parent_->vertex_count();
    if (!n) return std::size_t(-1);
    std::size_t count = 0;
    for (const auto& v : parent_->vertices()) count += parent_->out_edges(v).size();
    return count;
  }

  GraphPtr parent_;
  EdgeSet open_;
  bool oriented_ = false;
};

// ---------------------------------------------------------------------------
// Factories

inline GraphPtr make_explicit(std::size_t n, const std::vector<ExplicitEdge>& edges) {
  return std::make_shared<ExplicitGraph>(n, edges);
}

/// Single vertex with a self-loop of weight 1.
inline GraphPtr make_loop() { return make_explicit(1, {{0, 0, Rational(1)}}); }

inline GraphPtr make_zd(std::size_t dim, std::vector<Step> steps) {
  return std::make_shared<ZdKernelGraph>(dim, std::move(steps));
}

/// Nearest-neighbour simple random walk on Z^d.
inline GraphPtr make_zd_srw(std::size_t dim) {
  if (dim == 0) throw GraphError("Z^d needs d >= 1");
  std::vector<Step> steps;
  const Rational w(1, static_cast<std::int64_t>(2 * dim));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::int64_t s : {1, -1}) {
      std::vector<std::int64_t> delta(dim, 0);
      delta[i] = s;
      steps.push_back(Step{delta, w});
    }
  }
  return std::make_shared<ZdKernelGraph>(dim, std::move(steps), "srw(" + std::to_string(dim) + ")");
}

/// Walk on Z with p(i,i+1)=p, p(i,i-1)=q, p(i,i)=1-p-q.
inline GraphPtr make_drift(Rational p, Rational q) {
  if (p < Rational(0) || q < Rational(0)) throw GraphError("drift walk needs p, q >= 0");
  if (p + q > Rational(1)) throw GraphError("drift walk needs p + q <= 1");
  std::vector<Step> steps{{{1}, p}, {{-1}, q}, {{0}, 1 - p - q}};
  return std::make_shared<ZdKernelGraph>(
      1, std::move(steps), "drift(" + format_rational(p) + "; " + format_rational(q) + ")");
}

inline GraphPtr make_tree_srw(std::int64_t degree) { return std::make_shared<TreeGraph>(degree); }

inline GraphPtr cross_product(GraphPtr x, GraphPtr y) {
  return std::make_shared<ProductGraph>(ProductGraph::Kind::cross, std::move(x), std::move(y));
}

inline GraphPtr box_product(GraphPtr x, GraphPtr y) {
  return std::make_shared<ProductGraph>(ProductGraph::Kind::box, std::move(x), std::move(y));
}

inline GraphPtr restrict_to_edges(GraphPtr graph, EdgeSet open) {
  return std::make_shared<RestrictedGraph>(std::move(graph), std::move(open));
}

inline GraphPtr induced_subgraph(GraphPtr graph, const std::vector<VertexId>& vertices,
                                 std::string description) {
  return std::make_shared<ExplicitGraph>(std::move(graph), vertices, std::move(description));
}

/// Box {0, ..., side-1}^d of Z^d with simple-random-walk weights (the
/// restriction of the walk; boundary rows are substochastic).
inline GraphPtr make_zd_box(std::size_t dim, std::int64_t side) {
  if (dim == 0 || side < 1) throw GraphError("box needs d >= 1 and side >= 1");
  std::size_t total = 1;
  for (std::size_t i = 0; i < dim; ++i) total *= static_cast<std::size_t>(side);
  std::vector<VertexId> verts;
  verts.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::vector<std::int64_t> c(dim);
    std::size_t rest = idx;
    for (std::size_t i = dim; i-- > 0;) {
      c[i] = static_cast<std::int64_t>(rest % static_cast<std::size_t>(side));
      rest /= static_cast<std::size_t>(side);
    }
    verts.emplace_back(std::move(c));
  }
  return induced_subgraph(make_zd_srw(dim), verts,
                          "zbox(" + std::to_string(dim) + "; " + std::to_string(side) + ")");
}

/// All edges (x, y) of a finite graph.
inline EdgeSet all_edges(const WeightedGraph& g) {
  EdgeSet edges;
  for (const auto& x : g.vertices())
    for (const auto& e : g.out_edges(x)) edges.emplace(x, e.to);
  return edges;
}

}  // namespace brwlab
