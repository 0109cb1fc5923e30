#include "brwlab/coupling.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>

using namespace brwlab;

namespace {

FieldWindow window(std::int64_t lo, std::int64_t hi, std::uint32_t depth) {
  FieldWindow w;
  w.index_lo = lo;
  w.index_hi = hi;
  w.depth = depth;
  return w;
}

double crossing_frequency(double p, std::size_t samples, std::uint64_t seed) {
  const auto z = make_zd_srw(1);
  std::size_t crossed = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto f = iid_oriented_percolation(*z, p, window(-100, 100, 100), derive_seed(seed, {s}));
    crossed += cluster_survival(f, 0).crossed;
  }
  return static_cast<double>(crossed) / static_cast<double>(samples);
}

// Brute-force count of length-n paths that visit x.
std::uint64_t enumerate_paths(const WeightedGraph& g, const VertexId& x, int n) {
  std::uint64_t total = 0;
  std::function<void(const VertexId&, int, bool)> walk = [&](const VertexId& v, int left, bool seen) {
    seen = seen || v == x;
    if (left == 0) {
      total += seen;
      return;
    }
    for (const auto& e : g.out_edges(v))
      if (e.weight > 0.0) walk(e.to, left - 1, seen);
  };
  for (const auto& v : ball_vertices(g, x, n)) walk(v, n, false);
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Drift analysis

TEST(GLambda, AnchorIdentityOnRandomWalks) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int s = 0; s < 100; ++s) {
    const double p = 0.01 + 0.98 * u(gen);
    const double q = (1.0 - p) * (0.01 + 0.99 * u(gen));
    const double lambda = 0.1 + 4.9 * u(gen);
    EXPECT_NEAR(g_lambda(p - q, p, p, q, lambda), lambda, 1e-12) << p << ' ' << q << ' ' << lambda;
  }
}

TEST(GLambda, MatchesHighPrecisionValue) {
  // 1 * 0.7^0.7 0.1^0.2 0.2^0.1 / (0.7^0.7 0.2^0.2 0.1^0.1), evaluated at 30 digits.
  EXPECT_NEAR(g_lambda(0.5, 0.7, 0.7, 0.1, 1.0), 0.933032991536807, 1e-13);
}

TEST(GLambda, BoundaryUsesZeroPowerZero) {
  // beta = 0 forces every step to hold: g = lambda (1 - p - q).
  EXPECT_NEAR(g_lambda(0.0, 0.0, 0.7, 0.1, 1.0), 0.2, 1e-15);
  // beta = (1 + alpha) / 2 with alpha = 1: every step goes up.
  EXPECT_NEAR(g_lambda(1.0, 1.0, 0.7, 0.1, 2.0), 1.4, 1e-15);
}

TEST(GLambda, RejectsInadmissibleArguments) {
  EXPECT_THROW(g_lambda(0.5, 0.4, 0.7, 0.1, 1.0), DriftError);
  EXPECT_THROW(g_lambda(0.0, 0.6, 0.7, 0.1, 1.0), DriftError);
  EXPECT_THROW(g_lambda(0.0, 0.2, 0.7, 0.4, 1.0), DriftError);
  EXPECT_THROW(g_lambda(0.0, 0.2, 0.7, 0.0, 1.0), DriftError);
}

void expect_valid_region(const DriftAnalysis& d) {
  EXPECT_LE(d.anchor_error, 1e-12);
  EXPECT_LT(d.alpha1, d.alpha2);
  EXPECT_LE(d.alpha2, d.beta1);
  EXPECT_LT(d.beta1, d.beta2);
  for (double a : {d.alpha1, d.alpha2})
    for (double b : {d.beta1, d.beta2}) EXPECT_GT(g_lambda(a, b, d.p, d.q, d.lambda), 1.0);
  const double n = static_cast<double>(d.n);
  ASSERT_GT(d.n, 0);
  EXPECT_LT(d.d1, d.d2);
  EXPECT_LE(d.alpha1 * n, static_cast<double>(d.d1) + 1e-9);
  EXPECT_LE(static_cast<double>(d.d2), d.alpha2 * n + 1e-9);
  EXPECT_LE(d.beta1 * n, static_cast<double>(d.d3) + 1e-9);
  EXPECT_LE(static_cast<double>(d.d3), d.beta2 * n + 1e-9);
  EXPECT_NE(d.d3, d.d1);
  EXPECT_NE(d.d3, d.d2);
  for (auto dl : {d.d1, d.d2})
    EXPECT_GT(g_lambda(static_cast<double>(dl) / n, static_cast<double>(d.d3) / n, d.p, d.q, d.lambda), 1.0);
}

TEST(DriftRegion, FoundForBiasedWalk) { expect_valid_region(find_drift_region(0.7, 0.1, 1.05)); }

TEST(DriftRegion, FoundForSymmetricWalk) {
  const auto d = find_drift_region(0.4, 0.4, 1.05);
  expect_valid_region(d);
  EXPECT_NE(d.d1, d.d2);
}

TEST(DriftRegion, AbsentBelowOne) { EXPECT_THROW(find_drift_region(0.7, 0.1, 0.95), DriftError); }

TEST(DriftRegion, GridIsAdmissibleAndWritesCsv) {
  const auto d = find_drift_region(0.7, 0.1, 1.2);
  ASSERT_FALSE(d.grid.empty());
  for (const auto& c : d.grid) EXPECT_TRUE(drift_admissible(c.alpha, c.beta));
  std::ostringstream os;
  write_drift_csv(os, d);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "alpha,beta,g_value");
}

// ---------------------------------------------------------------------------
// Schemes and paths

TEST(Paths, SmallCountsOnTheLine) {
  const auto z = make_zd_srw(1);
  EXPECT_EQ(paths_through(*z, VertexId{0}, 0), 1u);
  EXPECT_EQ(paths_through(*z, VertexId{0}, 1), 4u);
  EXPECT_EQ(paths_through(*z, VertexId{0}, 2), 10u);
}

TEST(Paths, AgreesWithEnumeration) {
  for (const auto* d : {"srw(1)", "srw(2)", "tree(3)", "drift(1/2, 1/4)"}) {
    const auto g = parse_graph(d);
    for (int n = 0; n <= 5; ++n) EXPECT_EQ(paths_through(*g, g->origin(), n), enumerate_paths(*g, g->origin(), n)) << d << ' ' << n;
  }
}

TEST(Scheme, IntervalBlocksAreDisjoint) {
  const auto s = interval_scheme(make_zd_srw(1), 3);
  std::vector<VertexId> idx;
  for (std::int64_t i = -5; i <= 5; ++i) idx.push_back(VertexId{i});
  EXPECT_NO_THROW(check_disjoint(s, idx));
  EXPECT_EQ(s.block_of(VertexId{-1}), (std::vector<VertexId>{VertexId{-3}, VertexId{-2}, VertexId{-1}}));
  auto bad = s;
  bad.block = [](const VertexId& i) { return std::vector<VertexId>{i, VertexId{i.code[0] + 1}}; };
  EXPECT_THROW(check_disjoint(bad, idx), CouplingError);
}

TEST(Scheme, RoundRobinPlacement) {
  const auto s = interval_scheme(make_zd_srw(1), 3);
  const auto c = s.initial(VertexId{0}, 7);
  EXPECT_EQ(c.count(VertexId{0}), 3u);
  EXPECT_EQ(c.count(VertexId{1}), 2u);
  EXPECT_EQ(c.count(VertexId{2}), 2u);
}

TEST(Scheme, DriftIndexJumps) {
  const auto s = drift_scheme(make_zd_srw(1), 2, 5);
  EXPECT_EQ(s.targets(VertexId{1}), (std::vector<VertexId>{VertexId{3}, VertexId{6}}));
  EXPECT_THROW(drift_scheme(make_zd_srw(1), 2, 2), CouplingError);
  EXPECT_THROW(drift_scheme(make_zd_srw(2), 1, 2), CouplingError);
}

TEST(Quantile, SmallestValueCoveringTheFraction) {
  EXPECT_EQ(empirical_quantile(std::vector<int>{5, 1, 4, 2, 3}, 0.8), 4);
  EXPECT_EQ(empirical_quantile(std::vector<int>{5, 1, 4, 2, 3}, 1.0), 5);
  EXPECT_EQ(empirical_quantile(std::vector<int>{5, 1, 4, 2, 3}, 0.0), 1);
}

// ---------------------------------------------------------------------------
// Block events

TEST(BlockEvent, ZeroRateNeverSucceeds) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 1;
  s.t_bar = 2.0;
  const auto est = estimate_block_success(s, VertexId{0}, 0.0, {Variant::eta}, 500, 1).front();
  EXPECT_EQ(est.joint.successes, 0u);
  EXPECT_EQ(est.per_target.size(), 2u);
}

TEST(BlockEvent, ImpossibleUnderTheSiteCap) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 3;
  s.site_cap = 2;
  const auto est = estimate_block_success(s, VertexId{0}, 3.0, {Variant::eta_m, Variant::eta}, 200, 1);
  EXPECT_TRUE(est[0].impossible);
  EXPECT_EQ(est[0].joint.successes, 0u);
  EXPECT_FALSE(est[1].impossible);
}

TEST(BlockEvent, VariantsAreOrdered) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 2;
  s.t_bar = 1.5;
  s.site_cap = 3;
  s.generation_cap = 4;
  s.birth_cap = 20;
  const auto est = estimate_block_success(
      s, VertexId{0}, 3.0, {Variant::eta, Variant::eta_m, Variant::eta_bar, Variant::eta_bar_m, Variant::eta_hat}, 1000,
      9);
  EXPECT_LE(est[1].joint.successes, est[0].joint.successes);
  EXPECT_LE(est[2].joint.successes, est[0].joint.successes);
  EXPECT_LE(est[3].joint.successes, est[1].joint.successes);
  EXPECT_LE(est[3].joint.successes, est[2].joint.successes);
  EXPECT_LE(est[4].joint.successes, est[3].joint.successes);
}

TEST(BlockEvent, SuccessIsMonotoneInTheSiteCap) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 4;
  s.t_bar = 1.5;
  const auto est = estimate_block_success(s, VertexId{0}, 3.0, {}, 1000, 3, {2, 4, 8, 16, kUnbounded});
  for (std::size_t l = 1; l < est.size(); ++l) EXPECT_LE(est[l - 1].joint.successes, est[l].joint.successes);
  EXPECT_TRUE(est[0].impossible);
}

TEST(Tune, LoopIsTunable) {
  TuneOptions opt;
  opt.epsilon = 0.1;
  opt.seed = 5;
  const auto r = tune_block(singleton_scheme(make_loop()), 2.0, opt);
  EXPECT_GT(r.k, 0u);
  EXPECT_GT(r.t_bar, 0.0);
  EXPECT_GE(r.joint.p_hat, 0.9);
  EXPECT_GT(r.nbar, 0u);
}

TEST(Tune, RejectsRateBelowTheLadder) {
  EXPECT_THROW(tune_block(singleton_scheme(make_zd_srw(1)), 0.9), CouplingError);
}

TEST(Tune, ReportsAnExhaustedBudget) {
  TuneOptions opt;
  opt.t_points = 2;
  opt.k_doublings = 1;
  opt.epsilon = 0.001;
  EXPECT_THROW(tune_block(singleton_scheme(make_zd_srw(1)), 1.2, opt), TuningFailure);
}

TEST(Tune, TunedLineBlocksSucceed) {
  TuneOptions opt;
  opt.seed = 11;
  const auto s = singleton_scheme(make_zd_srw(1));
  const auto r = tune_block(s, 3.0, opt);
  auto tuned = s;
  tuned.t_bar = r.t_bar;
  tuned.k = r.k;
  const auto est = estimate_block_success(tuned, VertexId{0}, 3.0, {Variant::eta}, 2000, 77).front();
  EXPECT_GT(est.joint.p_hat, 0.9);
  EXPECT_GE(r.n0, 1u);
}

TEST(Tune, SmallerEpsilonNeedsMoreParticles) {
  const auto s = singleton_scheme(make_zd_srw(1));
  TuneOptions loose, tight;
  loose.epsilon = 0.2;
  tight.epsilon = 0.05;
  loose.seed = tight.seed = 4;
  const auto a = tune_block(s, 2.0, loose);
  const auto b = tune_block(s, 2.0, tight);
  EXPECT_GE(b.k, a.k);
}

// ---------------------------------------------------------------------------
// Fields

TEST(IidField, FullyOpenFieldFillsTheCone) {
  const auto z = make_zd_srw(1);
  const auto f = iid_oriented_percolation(*z, 1.0, window(-50, 50, 40), 1);
  const auto c = cluster_survival(f, 0);
  EXPECT_TRUE(c.crossed);
  EXPECT_EQ(c.max_depth, 40u);
  // Z x N with i -> i +- 1 is bipartite: the origin column is revisited at even levels.
  EXPECT_EQ(c.column_hits, 20u);
  const auto lazy = parse_graph("zd(1; -1:1/3; 0:1/3; 1:1/3)");
  EXPECT_EQ(cluster_survival(iid_oriented_percolation(*lazy, 1.0, window(-50, 50, 40), 1), 0).column_hits, 40u);
}

TEST(IidField, ClosedFieldHasNoEdges) {
  const auto f = iid_oriented_percolation(*make_zd_srw(1), 0.0, window(-10, 10, 10), 1);
  EXPECT_TRUE(f.open.empty());
  EXPECT_EQ(cluster_survival(f, 0).max_depth, 0u);
}

TEST(IidField, FieldsAreNestedInP) {
  const auto z = make_zd_srw(1);
  const auto lo = iid_oriented_percolation(*z, 0.5, window(-20, 20, 20), 3);
  const auto hi = iid_oriented_percolation(*z, 0.7, window(-20, 20, 20), 3);
  for (const auto& e : lo.open) EXPECT_TRUE(hi.is_open(e.i, e.n, e.j));
  EXPECT_GT(hi.open.size(), lo.open.size());
}

TEST(IidField, EdgesStayInTheWindowAndFollowTheIndex) {
  const auto f = iid_oriented_percolation(*make_zd_srw(1), 0.6, window(-5, 5, 8), 2);
  for (const auto& e : f.open) {
    EXPECT_TRUE(f.window.contains(e.i));
    EXPECT_TRUE(f.window.contains(e.j));
    EXPECT_LT(e.n, 8u);
    EXPECT_EQ(std::abs(e.j - e.i), 1);
  }
  EXPECT_TRUE(std::is_sorted(f.open.begin(), f.open.end(), OrientedPercolationField::level_order));
}

TEST(IidField, TwoPhases) {
  const double low = crossing_frequency(0.3, 1000, 21);
  const double high = crossing_frequency(0.8, 1000, 21);
  EXPECT_LT(low, 0.01);
  EXPECT_GT(high, 0.5);
  EXPECT_LE(crossing_frequency(0.6, 300, 21), crossing_frequency(0.7, 300, 21));
}

TEST(IidField, DumpFormat) {
  OrientedPercolationField f;
  f.window = window(-1, 2, 3);
  f.open = {{0, 0, 1}, {1, 1, 2}};
  std::ostringstream os;
  f.dump(os);
  EXPECT_EQ(os.str(), "index_lo index_hi depth\n-1 2 3\n0 0 1\n1 1 2\n");
}

TEST(IidField, RejectsBadInput) {
  EXPECT_THROW(iid_oriented_percolation(*make_zd_srw(1), 1.5, window(0, 1, 1), 1), CouplingError);
  EXPECT_THROW(iid_oriented_percolation(*make_zd_srw(1), 0.5, window(1, 0, 1), 1), CouplingError);
  EXPECT_THROW(iid_oriented_percolation(*make_zd_srw(2), 0.5, window(0, 1, 1), 1), CouplingError);
}

TEST(BlockField, ZeroRateOpensNothing) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 1;
  const auto f = sample_block_driven_field(s, 0.0, window(-10, 10, 10), 1);
  EXPECT_TRUE(f.open.empty());
}

TEST(BlockField, SiteOrderDoesNotMatter) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 2;
  s.t_bar = 1.0;
  s.birth_cap = 200;
  for (auto mode : {FieldMode::reachable, FieldMode::full}) {
    BlockFieldOptions fwd, rev;
    fwd.mode = rev.mode = mode;
    rev.reverse_order = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto a = sample_block_driven_field(s, 3.0, window(-8, 8, 8), seed, fwd);
      const auto b = sample_block_driven_field(s, 3.0, window(-8, 8, 8), seed, rev);
      EXPECT_EQ(a.open, b.open);
    }
  }
}

TEST(BlockField, ReachableFieldIsTheOriginsPartOfTheFullField) {
  auto s = singleton_scheme(make_zd_srw(1));
  s.k = 2;
  s.t_bar = 1.0;
  s.birth_cap = 200;
  BlockFieldOptions full;
  full.mode = FieldMode::full;
  const auto a = sample_block_driven_field(s, 2.5, window(-6, 6, 6), 8);
  const auto b = sample_block_driven_field(s, 2.5, window(-6, 6, 6), 8, full);
  for (const auto& e : a.open) EXPECT_TRUE(b.is_open(e.i, e.n, e.j));
  EXPECT_EQ(cluster_survival(a, 0).max_depth, cluster_survival(b, 0).max_depth);
}

TEST(BlockField, DriftSchemeUsesItsJumps) {
  auto s = drift_scheme(make_zd_srw(1), 1, 3);
  s.k = 1;
  s.t_bar = 2.0;
  const auto f = sample_block_driven_field(s, 4.0, window(-10, 40, 6), 2);
  ASSERT_FALSE(f.open.empty());
  for (const auto& e : f.open) EXPECT_TRUE(e.j - e.i == 1 || e.j - e.i == 3);
}
