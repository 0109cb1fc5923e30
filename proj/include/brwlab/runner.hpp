#pragma once

// Command runners behind the brwlab tool.  Each command first turns its
// Settings into a fully validated job (so configuration errors surface before
// any work starts), then computes, writes one CSV and returns a JSON summary
// for the run manifest.

#include "brwlab/config.hpp"
#include "brwlab/coupling.hpp"
#include "brwlab/descriptor.hpp"
#include "brwlab/random_env.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>

namespace brwlab {

inline constexpr const char* kVersion = "0.1.0";

/// Work finished but a numerical procedure did not converge (exit code 2).
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, nlohmann::json summary, std::string csv)
      : std::runtime_error(what), summary(std::move(summary)), csv(std::move(csv)) {}
  nlohmann::json summary;
  /// Whatever table was computed before the failure.
  std::string csv;
};

struct CommandOutput {
  std::string csv;
  nlohmann::json summary;
  /// Extra files (path, contents), e.g. a field dump.
  std::vector<std::pair<std::string, std::string>> extra;
};

namespace detail {

inline GraphPtr graph_setting(const Settings& s, const std::string& key) {
  try {
    return parse_graph(s.raw(key));
  } catch (const GraphError& e) {
    s.fail(key, std::string("is not a valid graph: ") + e.what());
  }
}

inline VertexId vertex_setting(const Settings& s, const std::string& key, const WeightedGraph& g,
                               std::optional<VertexId> fallback) {
  const auto t = std::string(trim(s.raw(key)));
  if (t.empty()) return fallback ? *fallback : g.origin();
  try {
    return g.parse(t);
  } catch (const GraphError& e) {
    s.fail(key, std::string("is not a vertex: ") + e.what());
  }
}

/// "v:n; v:n" with vertices in the graph's text form; empty means one
/// particle at the origin.
inline ParticleConfiguration initial_setting(const Settings& s, const std::string& key, const WeightedGraph& g) {
  const auto t = std::string(trim(s.raw(key)));
  if (t.empty()) return ParticleConfiguration::single(g.origin());
  ParticleConfiguration c;
  for (auto part : split_top(t, ';')) {
    const auto colon = part.rfind(':');
    if (colon == std::string_view::npos) s.fail(key, "entries must look like vertex:count");
    VertexId v;
    std::int64_t n = 0;
    try {
      v = g.parse(part.substr(0, colon));
      n = parse_int(part.substr(colon + 1));
    } catch (const GraphError& e) {
      s.fail(key, e.what());
    }
    if (n < 1) s.fail(key, "counts must be >= 1");
    c.add(v, static_cast<std::uint64_t>(n), g.total_weight(v));
  }
  return c;
}

inline SurvivalMode mode_setting(const Settings& s) {
  return s.choice("mode", {"weak", "local"}) == "weak" ? SurvivalMode::weak : SurvivalMode::local;
}

inline nlohmann::json estimate_json(const SurvivalEstimate& e) {
  return {{"replicas", e.replicas}, {"successes", e.successes}, {"p_hat", e.p_hat},
          {"ci_lo", e.ci_lo},       {"ci_hi", e.ci_hi},         {"ceiling_hits", e.ceiling_hits}};
}

/// Finite doubles as numbers, the rest as strings, so the JSON stays valid.
inline nlohmann::json number(double x) {
  if (std::isfinite(x)) return x;
  return fmt_double(x);
}

inline std::string with_header(const Settings& s, const std::string& body) {
  std::ostringstream os;
  write_settings_header(os, s, kVersion);
  os << body;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spectral

inline CommandOutput cmd_spectral(const Settings& s) {
  const auto g = detail::graph_setting(s, "graph");
  const auto mode = s.choice("mode", {"ladder", "occupancy"});
  const auto center = detail::vertex_setting(s, "center", *g, std::nullopt);
  PowerIterationOptions solver;
  solver.tol = s.positive("tol");
  solver.max_iter = s.at_least("max_iter", 1);
  const double lambda = s.nonnegative("lambda");
  const auto target = detail::vertex_setting(s, "target", *g, center);
  const auto times = s.doubles("times");
  for (double t : times)
    if (!(t >= 0.0)) s.fail("times", "must be nonnegative");
  const auto order = s.to_int("order");
  if (order < -1 || order > 100000) s.fail("order", "must be -1 or in 0..100000");
  std::vector<int> radii;
  for (auto r : s.integers("radii")) {
    if (r < 0 || r > 100000) s.fail("radii", "must lie in 0..100000");
    if (!radii.empty() && r <= radii.back()) s.fail("radii", "must be strictly increasing");
    radii.push_back(static_cast<int>(r));
  }
  const bool symmetry = s.to_bool("symmetry");
  CommandOutput out;
  std::ostringstream csv;

  if (mode == "occupancy") {
    std::vector<OccupancySeries> rows;
    for (double t : times) rows.push_back(expected_count(g, center, target, lambda, t, static_cast<int>(order)));
    write_occupancy_csv(csv, rows);
    double worst = 0.0;
    for (const auto& r : rows) worst = std::max(worst, r.tail_bound);
    out.summary = {{"rows", rows.size()}, {"max_tail_bound", detail::number(worst)}};
    out.csv = detail::with_header(s, csv.str());
    return out;
  }

  LadderOptions opt;
  opt.solver = solver;
  opt.use_symmetry = symmetry;
  const auto ladder = truncation_ladder(*g, center, radii, opt);
  write_ladder_csv(csv, ladder);
  out.csv = detail::with_header(s, csv.str());
  out.summary = {{"rows", ladder.entries.size()},
                 {"limit_candidate", detail::number(ladder.limit_candidate)},
                 {"strictly_decreasing", ladder.strictly_decreasing()},
                 {"settled", ladder.settled},
                 {"all_converged", ladder.all_converged()},
                 {"warnings", ladder.warnings}};
  if (ladder.extrapolated) out.summary["extrapolated_heuristic"] = detail::number(*ladder.extrapolated);
  if (!ladder.all_converged()) {
    std::string radii_text;
    for (const auto& e : ladder.entries)
      if (!e.estimate.converged) radii_text += (radii_text.empty() ? "" : ", ") + std::to_string(e.radius);
    throw NonConvergence("power iteration did not converge at radius " + radii_text, out.summary, out.csv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate / scan

namespace detail {

inline SimulationPlan plan_setting(const Settings& s, const GraphPtr& g) {
  SimulationPlan plan;
  plan.graph = g;
  plan.generation_cap = s.cap("n0", 0, kUnbounded);
  plan.birth_cap = s.cap("nbar", 0, kUnbounded);
  plan.horizon = s.positive("horizon");
  plan.replicas = s.at_least("replicas", 100);
  plan.initial = initial_setting(s, "initial", *g);
  plan.marked = vertex_setting(s, "marked", *g, plan.initial.counts().begin()->first);
  plan.seed = s.seed();
  plan.population_ceiling = s.at_least("ceiling", 1);
  return plan;
}

}  // namespace detail

/// One row per (lambda, m); every row uses the master seed, so rows are
/// coupled through common streams.
inline CommandOutput cmd_simulate(const Settings& s) {
  const auto g = detail::graph_setting(s, "graph");
  auto plan = detail::plan_setting(s, g);
  const auto mode = detail::mode_setting(s);
  const auto lambdas = s.doubles("lambda");
  for (double l : lambdas)
    if (!(l >= 0.0)) s.fail("lambda", "must be nonnegative");
  const auto caps = s.caps("m", 1, kUnbounded);

  std::ostringstream csv;
  write_survival_header(csv);
  nlohmann::json rows = nlohmann::json::array();
  for (double lambda : lambdas)
    for (auto m : caps) {
      plan.lambda = lambda;
      plan.site_cap = m;
      const auto e = estimate_survival(plan, mode);
      write_survival_row(csv, lambda, m, mode, e, plan.horizon);
      auto row = detail::estimate_json(e);
      row["lambda"] = lambda;
      row["m"] = cap_text(m);
      rows.push_back(row);
    }
  CommandOutput out;
  out.csv = detail::with_header(s, csv.str());
  out.summary = {{"mode", to_string(mode)}, {"rows", rows}};
  return out;
}

inline CommandOutput cmd_scan(const Settings& s) {
  const auto g = detail::graph_setting(s, "graph");
  auto plan = detail::plan_setting(s, g);
  const auto mode = detail::mode_setting(s);
  const double lo = s.nonnegative("lambda_lo");
  const double hi = s.to_double("lambda_hi");
  if (!(hi > lo)) s.fail("lambda_hi", "must exceed lambda_lo");
  const auto refinements = s.to_uint("refinements");
  if (refinements > 30) s.fail("refinements", "must be <= 30");
  const double threshold = s.probability("threshold");
  const auto caps = s.caps("m", 1, kUnbounded);

  std::ostringstream csv;
  write_survival_header(csv);
  nlohmann::json scans = nlohmann::json::array();
  for (auto m : caps) {
    plan.site_cap = m;
    const auto r = scan_critical(plan, mode, lo, hi, static_cast<int>(refinements), threshold);
    for (const auto& p : r.probes) write_survival_row(csv, p.lambda, m, mode, p.estimate, plan.horizon);
    scans.push_back({{"m", cap_text(m)},
                     {"separated", r.separated},
                     {"bracket_lo", r.lo},
                     {"bracket_hi", r.hi},
                     {"midpoint", r.midpoint()},
                     {"probes", r.probes.size()},
                     {"note", r.note}});
  }
  CommandOutput out;
  out.csv = detail::with_header(s, csv.str());
  out.summary = {{"mode", to_string(mode)}, {"scans", scans}};
  return out;
}

// ---------------------------------------------------------------------------
// coupling

namespace detail {

/// `with_index`: the index key belongs to the scheme (it names the field's
/// index graph in iid mode instead).
inline BlockScheme scheme_setting(const Settings& s, bool with_index) {
  const auto g = graph_setting(s, "graph");
  const auto kind = s.choice("scheme", {"singleton", "interval", "drift"});
  const auto index_text = std::string(trim(s.raw("index")));
  GraphPtr index = index_text.empty() || !with_index ? nullptr : graph_setting(s, "index");
  BlockScheme scheme;
  try {
    if (kind == "singleton") {
      scheme = singleton_scheme(g);
      if (index) s.fail("index", "cannot be set for singleton blocks (the index graph is the graph itself)");
    } else if (kind == "interval") {
      scheme = interval_scheme(g, s.to_int("width"), index);
    } else {
      if (index) s.fail("index", "cannot be set for the drift scheme");
      scheme = drift_scheme(g, s.to_int("d1"), s.to_int("d2"));
    }
  } catch (const CouplingError& e) {
    s.fail("scheme", e.what());
  }
  scheme.t_bar = s.positive("t_bar");
  scheme.k = s.at_least("k", 1);
  scheme.site_cap = s.cap("m", 1, kUnbounded);
  scheme.generation_cap = s.cap("n0", 0, kUnbounded);
  scheme.birth_cap = s.cap("nbar", 0, kUnbounded);
  return scheme;
}

inline std::int64_t max_jump(const WeightedGraph& index, std::int64_t at) {
  std::int64_t jump = 0;
  for (const auto& e : index.out_edges(VertexId{at})) jump = std::max(jump, std::abs(e.to.code.at(0) - at));
  return jump;
}

inline FieldWindow window_setting(const Settings& s, const WeightedGraph& index, std::int64_t origin) {
  if (index.origin().code.size() != 1) s.fail("index", "field windows need a one-dimensional integer index graph");
  FieldWindow w;
  const auto depth = s.at_least("depth", 1);
  if (depth > 100000) s.fail("depth", "must be <= 100000");
  w.depth = static_cast<std::uint32_t>(depth);
  const auto reach = static_cast<std::int64_t>(depth) * max_jump(index, origin);
  w.index_lo = trim(s.raw("index_lo")).empty() ? origin - reach : s.to_int("index_lo");
  w.index_hi = trim(s.raw("index_hi")).empty() ? origin + reach : s.to_int("index_hi");
  if (w.index_hi < w.index_lo) s.fail("index_hi", "must be >= index_lo");
  if (!w.contains(origin)) s.fail("origin", "must lie in the window");
  if (w.index_hi - w.index_lo > 1'000'000) s.fail("index_hi", "window is wider than 10^6 sites");
  return w;
}

struct FieldStats {
  std::size_t crossed = 0;
  double depth_sum = 0.0, hits_sum = 0.0;
};

inline void write_field_row(std::ostream& os, const std::string& rule, double parameter, std::size_t samples,
                            const FieldStats& st) {
  const auto e = wilson(st.crossed, samples);
  const double n = static_cast<double>(samples);
  csv_row(os, rule, parameter, samples, st.crossed, e.p_hat, e.ci_lo, e.ci_hi, st.depth_sum / n, st.hits_sum / n);
}

inline nlohmann::json field_json(const std::string& rule, double parameter, std::size_t samples,
                                 const FieldStats& st) {
  auto j = estimate_json(wilson(st.crossed, samples));
  j["rule"] = rule;
  j["parameter"] = parameter;
  j["mean_depth"] = st.depth_sum / static_cast<double>(samples);
  j["mean_column_hits"] = st.hits_sum / static_cast<double>(samples);
  return j;
}

inline void write_field_header(std::ostream& os) {
  csv_row(os, "rule", "parameter", "samples", "crossed", "survival_freq", "ci_lo", "ci_hi", "mean_depth",
          "mean_column_hits");
}

inline std::vector<Variant> variants_setting(const Settings& s) {
  std::vector<Variant> out;
  for (const auto& name : s.items("variants")) {
    bool found = false;
    for (auto v : {Variant::eta, Variant::eta_m, Variant::eta_bar, Variant::eta_bar_m, Variant::eta_hat})
      if (name == to_string(v)) {
        out.push_back(v);
        found = true;
      }
    if (!found) s.fail("variants", "has an unknown process '" + name + "'");
  }
  return out;
}

}  // namespace detail

inline CommandOutput cmd_coupling(const Settings& s) {
  const auto mode = s.choice("mode", {"iid", "block", "estimate", "tune"});
  const double lambda = s.nonnegative("lambda");
  const std::uint64_t seed = s.seed();
  const auto samples = s.at_least("samples", 1);
  const auto origin = s.to_int("origin");
  const auto dump = std::string(detail::trim(s.raw("dump")));
  const auto replicas = s.at_least("replicas", 100);
  const auto variants = detail::variants_setting(s);
  const auto ps = s.doubles("p");
  for (double p : ps)
    if (!(p >= 0.0 && p <= 1.0)) s.fail("p", "entries must lie in [0, 1]");
  TuneOptions opt;
  opt.epsilon = s.to_double("epsilon");
  if (!(opt.epsilon > 0.0 && opt.epsilon < 1.0)) s.fail("epsilon", "must lie in (0, 1)");
  opt.t_step = s.positive("t_step");
  const auto t_points = s.at_least("t_points", 1);
  const auto k_doublings = s.at_least("k_doublings", 1);
  if (t_points > 10000) s.fail("t_points", "must be <= 10000");
  if (k_doublings > 40) s.fail("k_doublings", "must be <= 40");
  opt.t_points = static_cast<int>(t_points);
  opt.k_doublings = static_cast<int>(k_doublings);
  opt.replicas = replicas;
  opt.seed = seed;
  const auto scheme = detail::scheme_setting(s, mode != "iid");
  const auto source = detail::vertex_setting(s, "source", *scheme.index, std::nullopt);
  opt.source = source;
  CommandOutput out;
  std::ostringstream csv;

  if (mode == "iid") {
    const auto index_text = std::string(detail::trim(s.raw("index")));
    const auto index = index_text.empty() ? make_zd_srw(1) : detail::graph_setting(s, "index");
    const auto window = detail::window_setting(s, *index, origin);
    detail::write_field_header(csv);
    out.summary["fields"] = nlohmann::json::array();
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
      std::vector<ClusterSurvival> res(samples);
      parallel_for(samples, [&](std::size_t k) {
        const auto f = iid_oriented_percolation(*index, ps[pi], window, derive_seed(seed, {k}));
        res[k] = cluster_survival(f, origin);
      });
      detail::FieldStats st;
      for (const auto& r : res) {
        st.crossed += r.crossed;
        st.depth_sum += r.max_depth;
        st.hits_sum += r.column_hits;
      }
      detail::write_field_row(csv, "iid-bernoulli", ps[pi], samples, st);
      out.summary["fields"].push_back(detail::field_json("iid-bernoulli", ps[pi], samples, st));
    }
    if (!dump.empty()) {
      std::ostringstream os;
      iid_oriented_percolation(*index, ps.front(), window, derive_seed(seed, {0})).dump(os);
      out.extra.emplace_back(dump, os.str());
    }
    out.summary["window"] = {{"index_lo", window.index_lo}, {"index_hi", window.index_hi}, {"depth", window.depth}};
    out.csv = detail::with_header(s, csv.str());
    return out;
  }

  if (mode == "block") {
    const auto window = detail::window_setting(s, *scheme.index, origin);
    detail::write_field_header(csv);
    std::vector<ClusterSurvival> res(samples);
    // Samples run one after another; parallelism lives inside each level.
    for (std::size_t k = 0; k < samples; ++k) {
      BlockFieldOptions opt;
      opt.origin = origin;
      res[k] = cluster_survival(sample_block_driven_field(scheme, lambda, window, derive_seed(seed, {k}), opt), origin);
    }
    detail::FieldStats st;
    for (const auto& r : res) {
      st.crossed += r.crossed;
      st.depth_sum += r.max_depth;
      st.hits_sum += r.column_hits;
    }
    detail::write_field_row(csv, "block-driven", lambda, samples, st);
    out.summary["fields"] = nlohmann::json::array({detail::field_json("block-driven", lambda, samples, st)});
    if (!dump.empty()) {
      std::ostringstream os;
      BlockFieldOptions opt;
      opt.origin = origin;
      sample_block_driven_field(scheme, lambda, window, derive_seed(seed, {0}), opt).dump(os);
      out.extra.emplace_back(dump, os.str());
    }
    out.csv = detail::with_header(s, csv.str());
    return out;
  }

  if (mode == "estimate") {
    const auto est = estimate_block_success(scheme, source, lambda, variants, replicas, seed);
    csv_row(csv, "variant", "m", "target", "replicas", "successes", "p_hat", "ci_lo", "ci_hi", "impossible");
    out.summary["variants"] = nlohmann::json::array();
    for (const auto& e : est) {
      for (std::size_t t = 0; t < e.targets.size(); ++t) {
        const auto& p = e.per_target[t];
        csv_row(csv, to_string(e.variant), cap_text(e.site_cap), scheme.index->format(e.targets[t]), p.replicas,
                p.successes, p.p_hat, p.ci_lo, p.ci_hi, e.impossible ? 1 : 0);
      }
      csv_row(csv, to_string(e.variant), cap_text(e.site_cap), "joint", e.joint.replicas, e.joint.successes,
              e.joint.p_hat, e.joint.ci_lo, e.joint.ci_hi, e.impossible ? 1 : 0);
      auto j = detail::estimate_json(e.joint);
      j["variant"] = to_string(e.variant);
      j["impossible"] = e.impossible;
      out.summary["variants"].push_back(j);
    }
    out.csv = detail::with_header(s, csv.str());
    return out;
  }

  const auto r = tune_block(scheme, lambda, opt);
  // H: paths of length n0 through the source vertex; skipped when the ball
  // would be too large to sweep.
  std::optional<std::uint64_t> h;
  if (r.n0 <= 16) h = paths_through(*scheme.graph, scheme.block_of(source).front(), static_cast<int>(r.n0));
  csv_row(csv, "t_bar", "k", "n0", "nbar", "joint_p_hat", "ci_lo", "ci_hi", "min_expected", "critical_proxy",
          "paths_H", "site_cap_bound");
  const std::string h_text = h ? std::to_string(*h) : "nan";
  const std::string bound_text = h ? std::to_string(2 * r.nbar * *h) : "nan";
  csv_row(csv, r.t_bar, r.k, r.n0, r.nbar, r.joint.p_hat, r.joint.ci_lo, r.joint.ci_hi, r.min_expected,
          r.critical_proxy, h_text, bound_text);
  out.summary = {{"t_bar", r.t_bar}, {"k", r.k},       {"n0", r.n0},
                 {"nbar", r.nbar},   {"joint", detail::estimate_json(r.joint)},
                 {"paths_H", h_text}, {"site_cap_bound", bound_text}, {"log", r.log}};
  out.csv = detail::with_header(s, csv.str());
  return out;
}

// ---------------------------------------------------------------------------
// drift

inline CommandOutput cmd_drift(const Settings& s) {
  const double p = s.to_double("p"), q = s.to_double("q"), lambda = s.to_double("lambda");
  if (!(p > 0.0) || !(q > 0.0) || !(p + q <= 1.0)) s.fail("q", "p, q must be positive with p + q <= 1");
  if (!(lambda > 0.0)) s.fail("lambda", "must be positive");
  DriftOptions opt;
  opt.margin = s.positive("margin");
  opt.grid_step = s.positive("grid_step");
  if (opt.grid_step < 1e-3) s.fail("grid_step", "must be >= 0.001");
  opt.max_n = static_cast<std::int64_t>(s.at_least("max_n", 1));
  const double anchor = std::abs(g_lambda(p - q, p, p, q, lambda) - lambda);

  CommandOutput out;
  out.summary = {{"anchor_error", anchor}, {"anchor_check", anchor <= 1e-12 ? "pass" : "fail"}};
  try {
    const auto d = find_drift_region(p, q, lambda, opt);
    std::ostringstream csv;
    write_drift_csv(csv, d);
    out.csv = detail::with_header(s, csv.str());
    out.summary["region"] = {{"alpha1", d.alpha1}, {"alpha2", d.alpha2}, {"beta1", d.beta1}, {"beta2", d.beta2}};
    out.summary["n"] = d.n;
    out.summary["d1"] = d.d1;
    out.summary["d2"] = d.d2;
    out.summary["d3"] = d.d3;
  } catch (const DriftError& e) {
    DriftAnalysis d;
    d.grid = drift_grid(p, q, lambda, opt.grid_step);
    std::ostringstream csv;
    write_drift_csv(csv, d);
    out.csv = detail::with_header(s, csv.str());
    out.summary["region"] = nullptr;
    out.summary["error"] = e.what();
    throw NonConvergence(e.what(), out.summary, out.csv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// percolation

namespace detail {

/// "dyadic:a..b" (p_n = 1 - 2^-n), "a..b:p" (constant), or "n:p" entries.
inline std::vector<std::pair<int, double>> retention_setting(const Settings& s) {
  std::vector<std::pair<int, double>> out;
  auto range = [&](std::string_view text) {
    const auto dots = text.find("..");
    std::int64_t a = 0, b = 0;
    try {
      a = parse_int(dots == std::string_view::npos ? text : text.substr(0, dots));
      b = dots == std::string_view::npos ? a : parse_int(text.substr(dots + 2));
    } catch (const GraphError&) {
      s.fail("p", "has a bad index '" + std::string(text) + "'");
    }
    if (a < 0 || b < a || b > 1000) s.fail("p", "indices must satisfy 0 <= a <= b <= 1000");
    return std::pair{static_cast<int>(a), static_cast<int>(b)};
  };
  for (const auto& item : s.items("p")) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) s.fail("p", "entries must look like dyadic:a..b, a..b:p or n:p");
    const auto head = std::string_view(item).substr(0, colon);
    const auto tail = std::string_view(item).substr(colon + 1);
    if (head == "dyadic") {
      const auto [a, b] = range(tail);
      if (a < 1) s.fail("p", "dyadic indices start at 1");
      for (int n = a; n <= b; ++n) out.emplace_back(n, dyadic_retention(n));
      continue;
    }
    const auto [a, b] = range(head);
    double p = 0.0;
    const auto t = trim(tail);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), p);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size() || !(p > 0.0 && p <= 1.0))
      s.fail("p", "retention probabilities must lie in (0, 1]");
    for (int n = a; n <= b; ++n) out.emplace_back(n, p);
  }
  return out;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const auto n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

inline CommandOutput cmd_percolation(const Settings& s) {
  const auto dim = s.at_least("dim", 1);
  if (dim > 3) s.fail("dim", "must be <= 3");
  const auto side = s.at_least("side", 1);
  if (side > 100) s.fail("side", "must be <= 100");
  const auto ps = detail::retention_setting(s);
  const auto count = s.at_least("seeds", 1);
  if (count > 100000) s.fail("seeds", "must be <= 100000");
  PowerIterationOptions opt;
  opt.tol = s.positive("tol");
  opt.max_iter = s.at_least("max_iter", 1);

  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < count; ++i) seeds.push_back(derive_seed(s.seed(), {i}));
  const auto box = make_zd_box(dim, static_cast<std::int64_t>(side));
  const auto rows = convergence_experiment(box, static_cast<std::int64_t>(side), ps, seeds, opt);
  std::ostringstream csv;
  write_convergence_csv(csv, rows);

  CommandOutput out;
  out.csv = detail::with_header(s, csv.str());
  std::size_t violations = 0;
  std::map<int, std::vector<double>> gaps;
  for (const auto& r : rows) {
    if (r.lambda_s_largest < r.lambda_s_full) ++violations;
    gaps[r.n].push_back(r.gap());
  }
  nlohmann::json medians = nlohmann::json::object();
  for (const auto& [n, g] : gaps) medians[std::to_string(n)] = detail::number(detail::median(g));
  out.summary = {{"rows", rows.size()},
                 {"defect_sum", defect_sum(ps)},
                 {"lambda_s_full_box", rows.empty() ? nlohmann::json(nullptr) : detail::number(rows[0].lambda_s_full)},
                 {"cluster_below_box", violations},
                 {"median_gap", medians}};
  return out;
}

// ---------------------------------------------------------------------------
// dispatch and manifest

inline CommandOutput run_command(const Settings& s) {
  const auto& c = s.command();
  s.seed();
  try {
    if (c == "spectral") return cmd_spectral(s);
    if (c == "simulate") return cmd_simulate(s);
    if (c == "scan") return cmd_scan(s);
    if (c == "coupling") return cmd_coupling(s);
    if (c == "drift") return cmd_drift(s);
    if (c == "percolation") return cmd_percolation(s);
  } catch (const GraphError& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("unknown command '" + c + "'");
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string content_digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline nlohmann::json manifest_config(const Settings& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : s.values()) j[k] = v;
  return j;
}

/// Rebuilds Settings from a manifest, validating them against the schema.
inline Settings settings_from_manifest(const nlohmann::json& m) {
  if (!m.is_object() || !m.contains("command") || !m.contains("config") || !m["config"].is_object())
    throw ConfigError("manifest lacks command or config");
  const auto command = m["command"].get<std::string>();
  const auto& schema = config_schema();
  if (!schema.contains(command) || command.empty()) throw ConfigError("manifest names unknown command '" + command + "'");
  std::ostringstream top, section;
  section << '[' << command << "]\n";
  for (const auto& [k, v] : m["config"].items()) {
    if (!v.is_string()) throw ConfigError("manifest config values must be strings");
    const auto& keys = schema.at("");
    const bool global = std::any_of(keys.begin(), keys.end(), [&](const KeySpec& spec) { return spec.name == k; });
    (global ? top : section) << k << " = " << v.get<std::string>() << '\n';
  }
  return load_settings(top.str() + section.str(), command);
}

}  // namespace brwlab
