#pragma once

// Block events and the oriented percolation they induce.
//
// A block scheme pairs an index graph (I, E(I)) with disjoint vertex sets
// A_i of X.  The block event at i asks that k particles started in A_i put
// at least k particles into every A_j, (i, j) in E(I), by time t-bar.  If it
// has probability > 1 - eps, opening edges (i, n) -> (j, n + 1) of I x N
// accordingly gives a percolation whose survival forces survival of the
// branching process.  Index graphs are integer-labelled (Z, a half-line
// window of Z, or a Z kernel such as the {d1, d2} drift scheme).

#include "brwlab/brw.hpp"
#include "brwlab/descriptor.hpp"
#include "brwlab/kernel.hpp"
#include "brwlab/spectral.hpp"

#include <deque>
#include <set>
#include <unordered_map>

namespace brwlab {

class CouplingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Search budget exhausted without meeting the target.
class TuningFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BlockScheme {
  GraphPtr graph;
  GraphPtr index;
  std::function<std::vector<VertexId>(const VertexId&)> block;
  std::string block_rule;
  double t_bar = 1.0;
  std::uint64_t k = 1;
  std::uint64_t site_cap = kUnbounded;
  std::uint64_t generation_cap = kUnbounded;
  std::uint64_t birth_cap = kUnbounded;

  /// A_i in canonical order; never empty.
  std::vector<VertexId> block_of(const VertexId& i) const {
    auto b = block(i);
    if (b.empty()) throw CouplingError("empty block for index " + index->format(i));
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
  }

  /// Distinct out-neighbours of i in the index graph.
  std::vector<VertexId> targets(const VertexId& i) const {
    std::vector<VertexId> out;
    for (const auto& e : index->out_edges(i))
      if (e.weight > 0.0) out.push_back(e.to);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// k particles spread round-robin over A_i.
  ParticleConfiguration initial(const VertexId& i, std::uint64_t particles) const {
    const auto b = block_of(i);
    ParticleConfiguration c;
    for (std::size_t s = 0; s < b.size(); ++s) {
      const std::uint64_t n = particles / b.size() + (s < particles % b.size() ? 1 : 0);
      c.add(b[s], n, graph->total_weight(b[s]));
    }
    return c;
  }
};

/// A_i = {i}, with I = X.
inline BlockScheme singleton_scheme(GraphPtr x) {
  BlockScheme s;
  s.index = x;
  s.graph = std::move(x);
  s.block = [](const VertexId& i) { return std::vector<VertexId>{i}; };
  s.block_rule = "singleton";
  return s;
}

/// A_i = {w i, ..., w i + w - 1} on a one-dimensional X, indexed by Z with
/// nearest-neighbour edges (or the given index graph).
inline BlockScheme interval_scheme(GraphPtr x, std::int64_t width, GraphPtr index = nullptr) {
  if (width < 1) throw CouplingError("block width must be >= 1");
  if (x->origin().code.size() != 1) throw CouplingError("interval blocks need a one-dimensional graph");
  BlockScheme s;
  s.graph = std::move(x);
  s.index = index ? std::move(index) : make_zd_srw(1);
  s.block = [width](const VertexId& i) {
    std::vector<VertexId> b;
    for (std::int64_t o = 0; o < width; ++o) b.push_back(VertexId{i.code.at(0) * width + o});
    return b;
  };
  s.block_rule = "interval(" + std::to_string(width) + ")";
  return s;
}

/// The drift scheme: A_i = {i} and (i, n) -> (i + d1, n + 1), (i + d2, n + 1).
inline BlockScheme drift_scheme(GraphPtr x, std::int64_t d1, std::int64_t d2) {
  if (d1 == d2) throw CouplingError("drift scheme needs d1 != d2");
  if (x->origin().code.size() != 1) throw CouplingError("drift scheme needs a one-dimensional graph");
  BlockScheme s = singleton_scheme(std::move(x));
  s.index = parse_graph("zd(1; " + std::to_string(d1) + ":1/2; " + std::to_string(d2) + ":1/2)");
  s.block_rule = "drift(" + std::to_string(d1) + ", " + std::to_string(d2) + ")";
  return s;
}

/// Throws unless the blocks of the given indices are pairwise disjoint.
inline void check_disjoint(const BlockScheme& s, const std::vector<VertexId>& indices) {
  std::unordered_map<VertexId, VertexId, VertexIdHash> owner;
  for (const auto& i : indices)
    for (const auto& v : s.block_of(i)) {
      auto [it, fresh] = owner.emplace(v, i);
      if (!fresh && !(it->second == i))
        throw CouplingError("blocks of " + s.index->format(it->second) + " and " + s.index->format(i) +
                            " share " + s.graph->format(v));
    }
}

// ---------------------------------------------------------------------------
// Block events

enum class Variant { eta, eta_m, eta_bar, eta_bar_m, eta_hat };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::eta: return "eta";
    case Variant::eta_m: return "eta_m";
    case Variant::eta_bar: return "eta_bar";
    case Variant::eta_bar_m: return "eta_bar_m";
    default: return "eta_hat";
  }
}

/// eta-hat is eta-bar with births after the n-bar-th suppressed; it keeps
/// the site cap when one is set, which only matters if m < 2 n-bar H.
inline ProcessRule rule_for(Variant v, double lambda, const BlockScheme& s) {
  switch (v) {
    case Variant::eta: return {lambda, kUnbounded, kUnbounded, kUnbounded};
    case Variant::eta_m: return {lambda, s.site_cap, kUnbounded, kUnbounded};
    case Variant::eta_bar: return {lambda, kUnbounded, s.generation_cap, kUnbounded};
    case Variant::eta_bar_m: return {lambda, s.site_cap, s.generation_cap, kUnbounded};
    default: return {lambda, s.site_cap, s.generation_cap, s.birth_cap};
  }
}

struct BlockEstimate {
  Variant variant = Variant::eta;
  std::uint64_t site_cap = kUnbounded;
  std::vector<VertexId> targets;
  std::vector<SurvivalEstimate> per_target;
  SurvivalEstimate joint;
  /// k > m |A_j| for some target: the event cannot happen.
  bool impossible = false;
  /// Replica-wise total births and maximal generation (lane order).
  std::vector<std::uint64_t> births;
  std::vector<std::uint32_t> max_generation;
};

/// Monte Carlo probability that k particles started round-robin in A_i put
/// >= k particles into every out-neighbour block by time t-bar.  All
/// variants share one event stream per replica.
inline std::vector<BlockEstimate> estimate_block_success(const BlockScheme& s, const VertexId& i, double lambda,
                                                         const std::vector<Variant>& variants,
                                                         std::size_t replicas, std::uint64_t seed,
                                                         const std::vector<std::uint64_t>& site_caps = {}) {
  if (variants.empty() && site_caps.empty()) throw CouplingError("no process variant requested");
  if (replicas < 1) throw CouplingError("replica count must be positive");
  if (s.k < 1) throw CouplingError("particle threshold k must be >= 1");
  const auto targets = s.targets(i);
  if (targets.empty()) throw CouplingError("index " + s.index->format(i) + " has no out-neighbours");
  std::vector<std::vector<VertexId>> blocks;
  for (const auto& j : targets) blocks.push_back(s.block_of(j));

  std::vector<BlockEstimate> out;
  std::vector<ProcessRule> rules;
  for (auto v : variants) {
    BlockEstimate e;
    e.variant = v;
    rules.push_back(rule_for(v, lambda, s));
    e.site_cap = rules.back().site_cap;
    out.push_back(e);
  }
  // Extra eta_m lanes for an m sweep.
  for (auto m : site_caps) {
    BlockEstimate e;
    e.variant = Variant::eta_m;
    e.site_cap = m;
    rules.push_back({lambda, m, kUnbounded, kUnbounded});
    out.push_back(e);
  }
  for (auto& e : out) {
    e.targets = targets;
    for (const auto& b : blocks)
      if (e.site_cap != kUnbounded && e.site_cap * b.size() < s.k) e.impossible = true;
  }

  SimulationPlan plan;
  plan.graph = s.graph;
  plan.lambda = lambda;
  plan.horizon = s.t_bar;
  plan.initial = s.initial(i, s.k);
  plan.seed = derive_seed(seed, {key_of(i.code.empty() ? 0 : i.code[0])});
  plan.checkpoints = {s.t_bar};

  const std::size_t lanes = rules.size(), nt = targets.size();
  std::vector<char> hit(replicas * lanes * nt, 0);
  std::vector<std::uint64_t> births(replicas * lanes);
  std::vector<std::uint32_t> gens(replicas * lanes);
  parallel_for(replicas, [&](std::size_t r) {
    CoupledEngine engine(plan, rules, r);
    auto outs = engine.run();
    for (std::size_t l = 0; l < lanes; ++l) {
      births[r * lanes + l] = outs[l].total_births;
      gens[r * lanes + l] = outs[l].max_generation;
      for (std::size_t t = 0; t < nt; ++t) {
        std::uint64_t c = 0;
        for (const auto& v : blocks[t]) c += engine.count(l, v);
        hit[(r * lanes + l) * nt + t] = c >= s.k || outs[l].ceiling_hit;
      }
    }
  });
  for (std::size_t l = 0; l < lanes; ++l) {
    std::vector<std::size_t> per(nt, 0);
    std::size_t all = 0;
    for (std::size_t r = 0; r < replicas; ++r) {
      bool joint = true;
      for (std::size_t t = 0; t < nt; ++t) {
        const bool h = hit[(r * lanes + l) * nt + t];
        per[t] += h;
        joint = joint && h;
      }
      all += joint;
      out[l].births.push_back(births[r * lanes + l]);
      out[l].max_generation.push_back(gens[r * lanes + l]);
    }
    for (auto n : per) out[l].per_target.push_back(wilson(n, replicas));
    out[l].joint = wilson(all, replicas);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tuning

/// Smallest value v in the sample with at least a fraction q of the sample <= v.
template <typename T>
T empirical_quantile(std::vector<T> xs, double q) {
  if (xs.empty()) throw CouplingError("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  idx = std::clamp<std::size_t>(idx, 1, xs.size());
  return xs[idx - 1];
}

/// Number of length-n paths x_0 -> ... -> x_n (edges with mu > 0) that visit
/// x, counted by dynamic programming over (vertex, visited-x) states.
inline std::uint64_t paths_through(const WeightedGraph& g, const VertexId& x, int n) {
  if (n < 0) throw CouplingError("path length must be nonnegative");
  g.require_vertex(x);
  const auto back = detail::directed_distances(g, x, n, true);
  // counts[v] = {paths not yet through x, paths through x}
  std::map<VertexId, std::array<std::uint64_t, 2>> cur, next;
  for (const auto& [v, d] : back) cur[v][v == x ? 1 : 0] += 1;
  for (int step = 0; step < n; ++step) {
    next.clear();
    for (const auto& [v, c] : cur)
      for (const auto& e : g.out_edges(v)) {
        if (e.weight <= 0.0) continue;
        auto& slot = next[e.to];
        if (e.to == x) slot[1] += c[0] + c[1];
        else {
          // Paths not yet through x only matter while x is still reachable.
          slot[1] += c[1];
          slot[0] += c[0];
        }
      }
    cur.swap(next);
  }
  std::uint64_t total = 0;
  for (const auto& [v, c] : cur) total += c[1];
  return total;
}

/// Largest directed distance from A_i to any out-neighbour block (the
/// minimum over source/target vertex pairs), searched up to `limit`.
inline int block_distance(const BlockScheme& s, const VertexId& i, int limit = 64) {
  int worst = 0;
  const auto source = s.block_of(i);
  for (const auto& j : s.targets(i)) {
    const auto target = s.block_of(j);
    int best = std::numeric_limits<int>::max();
    for (const auto& x : source) {
      const auto d = detail::directed_distances(*s.graph, x, limit, false);
      for (const auto& y : target) {
        auto it = d.find(y);
        if (it != d.end()) best = std::min(best, it->second);
      }
    }
    if (best == std::numeric_limits<int>::max())
      throw CouplingError("block " + s.index->format(j) + " is not reachable within distance " +
                          std::to_string(limit));
    worst = std::max(worst, best);
  }
  return worst;
}

struct TuneOptions {
  double epsilon = 0.05;
  std::size_t replicas = 400;
  std::uint64_t seed = 0;
  /// t-bar grid: t_step, 2 t_step, ..., t_points * t_step.
  double t_step = 0.25;
  int t_points = 40;
  /// k = 1, 2, 4, ..., 2^(k_doublings - 1).
  int k_doublings = 12;
  /// Ladder radii for the supercriticality guard.
  std::vector<int> ladder_radii{1, 2, 4, 8, 16};
  /// Skip the ladder and use this value of nR instead.
  std::optional<double> critical_proxy;
  VertexId source;  // empty code: the index origin
};

struct TuneResult {
  double t_bar = 0.0;
  std::uint64_t k = 0;
  std::uint64_t n0 = 0;
  std::uint64_t nbar = 0;
  double min_expected = 0.0;
  double critical_proxy = 0.0;
  SurvivalEstimate joint;
  std::vector<std::string> log;
};

/// Picks (t-bar, k, n0, n-bar) for a scheme at rate lambda: t-bar is the
/// first grid time where every (source vertex, target block) pair has
/// expected occupancy > 1; k doubles until the joint block event has
/// estimated probability >= 1 - eps; n-bar is the (1 - eps)-quantile of the
/// total births by t-bar; n0 is the larger of the block distance and the
/// (1 - eps)-quantile of the maximal generation.
inline TuneResult tune_block(const BlockScheme& scheme, double lambda, const TuneOptions& opt = {}) {
  if (!(opt.epsilon > 0.0 && opt.epsilon < 1.0)) throw CouplingError("epsilon must be in (0, 1)");
  if (opt.t_points < 1 || !(opt.t_step > 0.0) || opt.k_doublings < 1)
    throw CouplingError("tuning budget must be positive");
  const VertexId i = opt.source.code.empty() ? scheme.index->origin() : opt.source;
  const auto source = scheme.block_of(i);
  TuneResult res;
  if (opt.critical_proxy) {
    res.critical_proxy = *opt.critical_proxy;
  } else {
    const auto ladder = truncation_ladder(*scheme.graph, source.front(), opt.ladder_radii);
    if (ladder.entries.empty()) throw CouplingError("no strongly connected ball for the supercriticality guard");
    res.critical_proxy = ladder.entries.back().estimate.inverse_radius;
  }
  if (!(lambda > res.critical_proxy))
    throw CouplingError("lambda = " + fmt_double(lambda) + " is not above the ladder value " +
                        fmt_double(res.critical_proxy));

  const auto targets = scheme.targets(i);
  if (targets.empty()) throw CouplingError("source index has no out-neighbours");
  const int distance = block_distance(scheme, i);

  for (int tp = 1; tp <= opt.t_points; ++tp) {
    const double t = opt.t_step * tp;
    double min_e = std::numeric_limits<double>::infinity();
    for (const auto& x : source)
      for (const auto& j : targets) {
        double sum = 0.0;
        for (const auto& y : scheme.block_of(j)) sum += expected_count(scheme.graph, x, y, lambda, t).value;
        min_e = std::min(min_e, sum);
      }
    if (!(min_e > 1.0)) continue;
    res.log.push_back("t=" + fmt_double(t) + ": min expected block occupancy " + fmt_double(min_e));
    BlockScheme s = scheme;
    s.t_bar = t;
    for (int d = 0; d < opt.k_doublings; ++d) {
      s.k = std::uint64_t{1} << d;
      auto est = estimate_block_success(s, i, lambda, {Variant::eta}, opt.replicas,
                                        derive_seed(opt.seed, {static_cast<std::uint64_t>(tp), s.k}))
                     .front();
      res.log.push_back("  k=" + std::to_string(s.k) + ": joint " + fmt_double(est.joint.p_hat));
      if (est.joint.p_hat >= 1.0 - opt.epsilon) {
        res.t_bar = t;
        res.k = s.k;
        res.min_expected = min_e;
        res.joint = est.joint;
        res.nbar = empirical_quantile(est.births, 1.0 - opt.epsilon);
        res.n0 = std::max<std::uint64_t>(static_cast<std::uint64_t>(distance),
                                         empirical_quantile(est.max_generation, 1.0 - opt.epsilon));
        return res;
      }
    }
  }
  std::string msg = "no (t-bar, k) reached joint success " + fmt_double(1.0 - opt.epsilon) + " within budget";
  for (const auto& l : res.log) msg += "\n" + l;
  throw TuningFailure(msg);
}

// ---------------------------------------------------------------------------
// Oriented percolation fields on I x N

struct FieldWindow {
  std::int64_t index_lo = -100;
  std::int64_t index_hi = 100;
  std::uint32_t depth = 100;

  bool contains(std::int64_t i) const noexcept { return index_lo <= i && i <= index_hi; }
};

enum class FieldRule { iid_bernoulli, block_driven };

inline const char* to_string(FieldRule r) { return r == FieldRule::iid_bernoulli ? "iid-bernoulli" : "block-driven"; }

struct OpenEdge {
  std::int64_t i = 0;
  std::uint32_t n = 0;
  std::int64_t j = 0;

  friend auto operator<=>(const OpenEdge&, const OpenEdge&) = default;
};

struct OrientedPercolationField {
  FieldWindow window;
  FieldRule rule = FieldRule::iid_bernoulli;
  /// Sorted by (n, i, j) for level sweeps.
  std::vector<OpenEdge> open;

  bool is_open(std::int64_t i, std::uint32_t n, std::int64_t j) const {
    const OpenEdge e{i, n, j};
    return std::binary_search(open.begin(), open.end(), e, level_order);
  }

  static bool level_order(const OpenEdge& a, const OpenEdge& b) {
    return std::tie(a.n, a.i, a.j) < std::tie(b.n, b.i, b.j);
  }

  void dump(std::ostream& os) const {
    os << "index_lo index_hi depth\n" << window.index_lo << ' ' << window.index_hi << ' ' << window.depth << '\n';
    for (const auto& e : open) os << e.i << ' ' << e.n << ' ' << e.j << '\n';
  }
};

namespace detail {

inline std::int64_t index_value(const VertexId& v) {
  if (v.code.size() != 1) throw CouplingError("index graph vertices must be single integers");
  return v.code[0];
}

inline std::vector<std::int64_t> index_targets(const WeightedGraph& index, std::int64_t i) {
  std::vector<std::int64_t> out;
  for (const auto& e : index.out_edges(VertexId{i}))
    if (e.weight > 0.0) out.push_back(index_value(e.to));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline void check_window(const FieldWindow& w) {
  if (w.index_hi < w.index_lo) throw CouplingError("field window has index_hi < index_lo");
}

}  // namespace detail

/// Each edge (i, n) -> (j, n + 1) of the window is open iff its uniform,
/// keyed by (seed, i, n, j), is below p; fields at different p from one
/// seed are therefore nested.
inline OrientedPercolationField iid_oriented_percolation(const WeightedGraph& index, double p,
                                                         const FieldWindow& window, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw CouplingError("p must be in [0, 1]");
  detail::check_window(window);
  detail::index_value(index.origin());
  OrientedPercolationField f;
  f.window = window;
  f.rule = FieldRule::iid_bernoulli;
  std::vector<std::vector<std::int64_t>> targets;
  for (auto i = window.index_lo; i <= window.index_hi; ++i) targets.push_back(detail::index_targets(index, i));
  for (std::uint32_t n = 0; n < window.depth; ++n)
    for (auto i = window.index_lo; i <= window.index_hi; ++i)
      for (auto j : targets[static_cast<std::size_t>(i - window.index_lo)]) {
        if (!window.contains(j)) continue;
        const double u = to_unit(derive_seed(seed, {key_of(i), n, key_of(j)}));
        if (u < p) f.open.push_back({i, n, j});
      }
  return f;
}

enum class FieldMode { reachable, full };

struct BlockFieldOptions {
  FieldMode mode = FieldMode::reachable;
  std::int64_t origin = 0;
  /// Process the sites of a level in reverse order (streams are keyed by
  /// site, so this must not change the field).
  bool reverse_order = false;
};

/// Level-by-level block-driven field: every active (i, n) runs its own
/// capped block process (eta-hat rule of the scheme) from k particles in A_i
/// for time t-bar, on a stream keyed by (seed, i, n), and opens the edges to
/// the blocks that reach k particles.  Restarts place k particles
/// round-robin in A_j, which coincides with any choice among the arrivals
/// for singleton blocks.
inline OrientedPercolationField sample_block_driven_field(const BlockScheme& s, double lambda,
                                                          const FieldWindow& window, std::uint64_t seed,
                                                          const BlockFieldOptions& opt = {}) {
  detail::check_window(window);
  if (s.k < 1) throw CouplingError("particle threshold k must be >= 1");
  OrientedPercolationField f;
  f.window = window;
  f.rule = FieldRule::block_driven;
  const ProcessRule rule = rule_for(Variant::eta_hat, lambda, s);

  auto run_site = [&](std::int64_t i, std::uint32_t n) {
    std::vector<std::int64_t> opened;
    const VertexId iv{i};
    const auto targets = detail::index_targets(*s.index, i);
    SimulationPlan plan;
    plan.graph = s.graph;
    plan.lambda = lambda;
    plan.horizon = s.t_bar;
    plan.initial = s.initial(iv, s.k);
    plan.seed = derive_seed(seed, {key_of(i), n});
    plan.checkpoints = {s.t_bar};
    CoupledEngine engine(plan, {rule}, 0);
    const auto out = engine.run().front();
    for (auto j : targets) {
      if (!window.contains(j)) continue;
      std::uint64_t c = 0;
      for (const auto& v : s.block_of(VertexId{j})) c += engine.count(0, v);
      if (c >= s.k || out.ceiling_hit) opened.push_back(j);
    }
    return opened;
  };

  std::vector<std::int64_t> active;
  if (opt.mode == FieldMode::full) {
    for (auto i = window.index_lo; i <= window.index_hi; ++i) active.push_back(i);
  } else if (window.contains(opt.origin)) {
    active.push_back(opt.origin);
  }
  for (std::uint32_t n = 0; n < window.depth && !active.empty(); ++n) {
    std::vector<std::vector<std::int64_t>> opened(active.size());
    auto order = active;
    if (opt.reverse_order) std::reverse(order.begin(), order.end());
    std::vector<std::vector<std::int64_t>> by_order(order.size());
    parallel_for(order.size(), [&](std::size_t a) { by_order[a] = run_site(order[a], n); });
    for (std::size_t a = 0; a < order.size(); ++a) {
      const std::size_t slot = opt.reverse_order ? order.size() - 1 - a : a;
      opened[slot] = std::move(by_order[a]);
    }
    std::set<std::int64_t> next;
    for (std::size_t a = 0; a < active.size(); ++a)
      for (auto j : opened[a]) {
        f.open.push_back({active[a], n, j});
        next.insert(j);
      }
    if (opt.mode == FieldMode::reachable) active.assign(next.begin(), next.end());
  }
  std::sort(f.open.begin(), f.open.end(), OrientedPercolationField::level_order);
  return f;
}

struct ClusterSurvival {
  /// Deepest level reached from (origin, 0).
  std::uint32_t max_depth = 0;
  /// Levels l >= 1 with (origin, l) in the cluster.
  std::uint32_t column_hits = 0;
  /// The cluster reaches the bottom of the window.
  bool crossed = false;
};

inline ClusterSurvival cluster_survival(const OrientedPercolationField& f, std::int64_t origin) {
  ClusterSurvival r;
  if (!f.window.contains(origin)) return r;
  std::set<std::int64_t> level{origin};
  std::size_t pos = 0;
  for (std::uint32_t n = 0; n < f.window.depth && !level.empty(); ++n) {
    std::set<std::int64_t> next;
    while (pos < f.open.size() && f.open[pos].n < n) ++pos;
    for (std::size_t q = pos; q < f.open.size() && f.open[q].n == n; ++q)
      if (level.contains(f.open[q].i)) next.insert(f.open[q].j);
    if (next.empty()) break;
    r.max_depth = n + 1;
    if (next.contains(origin)) ++r.column_hits;
    level.swap(next);
  }
  r.crossed = r.max_depth == f.window.depth;
  return r;
}

// ---------------------------------------------------------------------------
// Drift analysis for p(i, i+1) = p, p(i, i-1) = q, p(i, i) = 1 - p - q

class DriftError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

/// a log b with 0 log 0 = 0.
inline double weighted_log(double a, double b) {
  if (a == 0.0) return 0.0;
  return b > 0.0 ? a * std::log(b) : -std::numeric_limits<double>::infinity();
}

inline void check_walk(double p, double q) {
  if (!(p > 0.0) || !(q > 0.0) || !(p + q <= 1.0 + 1e-15)) throw DriftError("drift walk needs p, q > 0 and p + q <= 1");
}

}  // namespace detail

inline bool drift_admissible(double alpha, double beta) {
  constexpr double slack = 1e-12;
  return beta >= -slack && beta - alpha >= -slack && 1.0 - 2.0 * beta + alpha >= -slack;
}

/// log g_lambda(alpha, beta).
inline double log_g_lambda(double alpha, double beta, double p, double q, double lambda) {
  detail::check_walk(p, q);
  if (!(lambda > 0.0)) throw DriftError("lambda must be positive");
  if (!drift_admissible(alpha, beta)) throw DriftError("(alpha, beta) outside max(0, alpha) <= beta <= (1 + alpha) / 2");
  const double b = std::max(beta, 0.0);
  const double c = std::max(beta - alpha, 0.0);
  const double r = std::max(1.0 - 2.0 * beta + alpha, 0.0);
  const double hold = std::max(1.0 - p - q, 0.0);
  return std::log(lambda) + detail::weighted_log(b, p) + detail::weighted_log(c, q) +
         detail::weighted_log(r, hold) - detail::xlogx(b) - detail::xlogx(c) - detail::xlogx(r);
}

inline double g_lambda(double alpha, double beta, double p, double q, double lambda) {
  return std::exp(log_g_lambda(alpha, beta, p, q, lambda));
}

struct DriftOptions {
  double margin = 1e-3;
  /// Spacing of the (alpha, beta) grid written to the CSV.
  double grid_step = 0.05;
  std::int64_t max_n = 1'000'000;
};

struct DriftCell {
  double alpha, beta, g;
};

struct DriftAnalysis {
  double p = 0.0, q = 0.0, lambda = 0.0;
  double anchor_error = 0.0;
  double alpha1 = 0.0, alpha2 = 0.0, beta1 = 0.0, beta2 = 0.0;
  std::int64_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  std::vector<DriftCell> grid;
};

/// Grid of g over the admissible domain, alpha in [-1, 1].
inline std::vector<DriftCell> drift_grid(double p, double q, double lambda, double step) {
  if (!(step > 0.0)) throw DriftError("grid step must be positive");
  std::vector<DriftCell> cells;
  const auto steps = static_cast<std::int64_t>(std::floor(2.0 / step + 1e-9));
  for (std::int64_t a = 0; a <= steps; ++a) {
    const double alpha = -1.0 + static_cast<double>(a) * step;
    for (std::int64_t b = 0; b <= steps; ++b) {
      const double beta = -1.0 + static_cast<double>(b) * step;
      if (!drift_admissible(alpha, beta)) continue;
      cells.push_back({alpha, beta, g_lambda(alpha, beta, p, q, lambda)});
    }
  }
  return cells;
}

/// Finds a rectangle [a1, a2] x [b1, b2] (a1 < a2 <= b1 < b2, all points
/// admissible) on which g > 1 + margin, then the least n with integers
/// a1 n <= d1 < d2 <= a2 n and b1 n <= d3 <= b2 n, all distinct, such that
/// g(d_l / n, d3 / n) > 1.  log g is concave, so checking the corners
/// certifies the whole rectangle.
inline DriftAnalysis find_drift_region(double p, double q, double lambda, const DriftOptions& opt = {}) {
  detail::check_walk(p, q);
  DriftAnalysis d;
  d.p = p;
  d.q = q;
  d.lambda = lambda;
  const double a0 = p - q, b0 = p;
  d.anchor_error = std::abs(g_lambda(a0, b0, p, q, lambda) - lambda);
  d.grid = drift_grid(p, q, lambda, opt.grid_step);
  const double floor_log = std::log1p(opt.margin);
  auto certified = [&](double a1, double a2, double b1, double b2) {
    if (!(a1 < a2 && a2 <= b1 && b1 < b2)) return false;
    for (double a : {a1, a2})
      for (double b : {b1, b2})
        if (!drift_admissible(a, b) || !(log_g_lambda(a, b, p, q, lambda) > floor_log)) return false;
    return true;
  };
  bool found = false;
  for (double h = 0.25; h >= 1e-5 && !found; h /= 2) {
    // Offsets move the rectangle off a domain boundary through the anchor.
    for (double oa : {0.0, 1.0, -1.0, 2.0, -2.0}) {
      for (double ob : {0.0, -1.0, 1.0, -2.0, 2.0}) {
        const double ca = a0 + oa * h, cb = b0 + ob * h;
        const double a1 = ca - h / 2, a2 = ca + h / 2, b1 = cb - h / 2, b2 = cb + h / 2;
        if (certified(a1, a2, b1, b2)) {
          d.alpha1 = a1, d.alpha2 = a2, d.beta1 = b1, d.beta2 = b2;
          found = true;
          break;
        }
      }
      if (found) break;
    }
  }
  if (!found)
    throw DriftError("no rectangle with g > 1 + " + fmt_double(opt.margin) + " near (p - q, p); lambda = " +
                     fmt_double(lambda));
  for (std::int64_t n = 1; n <= opt.max_n; ++n) {
    const double nn = static_cast<double>(n);
    const auto d1 = static_cast<std::int64_t>(std::ceil(d.alpha1 * nn - 1e-9));
    const auto d2 = d1 + 1;
    if (static_cast<double>(d2) > d.alpha2 * nn + 1e-9) continue;
    const auto lo3 = static_cast<std::int64_t>(std::ceil(d.beta1 * nn - 1e-9));
    const auto hi3 = static_cast<std::int64_t>(std::floor(d.beta2 * nn + 1e-9));
    for (auto d3 = lo3; d3 <= hi3; ++d3) {
      if (d3 == d1 || d3 == d2) continue;
      const double b = static_cast<double>(d3) / nn;
      if (!drift_admissible(static_cast<double>(d1) / nn, b) || !drift_admissible(static_cast<double>(d2) / nn, b))
        continue;
      if (log_g_lambda(static_cast<double>(d1) / nn, b, p, q, lambda) > 0.0 &&
          log_g_lambda(static_cast<double>(d2) / nn, b, p, q, lambda) > 0.0) {
        d.n = n, d.d1 = d1, d.d2 = d2, d.d3 = d3;
        return d;
      }
    }
  }
  throw DriftError("no admissible n <= " + std::to_string(opt.max_n));
}

inline void write_drift_csv(std::ostream& os, const DriftAnalysis& d) {
  csv_row(os, "alpha", "beta", "g_value");
  for (const auto& c : d.grid) csv_row(os, c.alpha, c.beta, c.g);
}

}  // namespace brwlab
