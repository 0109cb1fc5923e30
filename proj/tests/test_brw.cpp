#include "brwlab/brw.hpp"
#include "brwlab/descriptor.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace brwlab;

namespace {

SimulationPlan plan_on(GraphPtr g, double lambda, double horizon, std::size_t replicas = 100) {
  SimulationPlan p;
  p.initial = ParticleConfiguration::single(g->origin());
  p.graph = std::move(g);
  p.lambda = lambda;
  p.horizon = horizon;
  p.replicas = replicas;
  p.seed = 20240611;
  return p;
}

struct Moments {
  double mean = 0.0;
  double se = 0.0;
};

template <typename Fn>
Moments sample(std::size_t n, Fn&& draw) {
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = draw(i);
    s += x;
    s2 += x * x;
  }
  const double mean = s / static_cast<double>(n);
  const double var = s2 / static_cast<double>(n) - mean * mean;
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

TEST(ParticleConfiguration, CachedTotalsMatchRecomputation) {
  auto g = parse_graph("zd(1; 1:1/2; -1:1/4)");
  ParticleConfiguration c;
  c.add(VertexId{0}, 3, g->total_weight(VertexId{0}));
  c.add(VertexId{5}, 2, g->total_weight(VertexId{5}));
  c.add(VertexId{0}, 1, g->total_weight(VertexId{0}));
  EXPECT_EQ(c.population(), 6u);
  EXPECT_EQ(c.count(VertexId{0}), 4u);
  EXPECT_EQ(c.count(VertexId{1}), 0u);
  EXPECT_EQ(c.cached_load(), c.load(*g));
  EXPECT_EQ(c.load(*g), 4.5);
}

TEST(Step, PureDeathLifetimeHasMeanOne) {
  auto plan = plan_on(make_loop(), 0.0, 1e9);
  const auto m = sample(100000, [&](std::size_t i) {
    CoupledEngine e(plan, {plan.rule()}, i);
    auto ev = e.step();
    EXPECT_EQ(ev.kind, EventKind::death);
    EXPECT_EQ(e.population(), 0u);
    return ev.elapsed;
  });
  EXPECT_NEAR(m.mean, 1.0, 0.02);
}

TEST(Step, FullTargetSuppressesBirthButAdvancesTime) {
  auto plan = plan_on(make_loop(), 5.0, 1e9);
  plan.site_cap = 1;
  CoupledEngine e(plan, {plan.rule()}, 0);
  double last = 0.0;
  int suppressed = 0;
  while (suppressed < 20) {
    auto ev = e.step();
    if (ev.kind == EventKind::death) {
      e = CoupledEngine(plan, {plan.rule()}, static_cast<std::uint64_t>(suppressed) + 1000);
      last = 0.0;
      continue;
    }
    ASSERT_EQ(ev.kind, EventKind::suppressed);
    EXPECT_GT(ev.time, last);
    EXPECT_EQ(e.population(), 1u);
    last = ev.time;
    ++suppressed;
  }
}

TEST(Step, EmptyConfigurationIsAnError) {
  auto plan = plan_on(make_loop(), 1.0, 1.0);
  plan.initial = {};
  CoupledEngine e(plan, {plan.rule()}, 0);
  EXPECT_THROW(e.step(), SimulationError);
}

TEST(Step, CapsAndCachedTotalsHoldAfterEveryEvent) {
  auto g = make_zd_srw(1);
  auto plan = plan_on(g, 3.0, 1e9);
  plan.site_cap = 2;
  plan.initial = ParticleConfiguration::single(g->origin(), 2);
  CoupledEngine e(plan, {plan.rule()}, 7);
  for (int i = 0; i < 3000 && e.population() > 0; ++i) {
    e.step();
    const auto c = e.configuration();
    ASSERT_EQ(c.population(), e.population());
    ASSERT_EQ(e.generations_total(0), e.population());
    ASSERT_EQ(c.cached_load(), c.load(*g));
    for (const auto& [v, n] : c.counts()) ASSERT_LE(n, 2u);
  }
}

TEST(Step, BirthDeathMeanOnALoop) {
  // d/dt E = (lambda - 1) E, so E eta_1 = e for lambda = 2.
  auto plan = plan_on(make_loop(), 2.0, 1.0);
  plan.checkpoints = {1.0};
  const auto m = sample(100000, [&](std::size_t i) {
    return static_cast<double>(run_replica(plan, i).checkpoints.at(0).population);
  });
  EXPECT_NEAR(m.mean, std::exp(1.0), 4 * m.se);
}

TEST(RunReplica, NoBirthsMeansExtinctionAtTheLastDeath) {
  // Max of three Exp(1) lifetimes: mean 1 + 1/2 + 1/3.
  auto plan = plan_on(make_zd_srw(2), 0.0, 1e9);
  plan.initial = ParticleConfiguration::single(plan.graph->origin(), 3);
  const auto m = sample(20000, [&](std::size_t i) {
    auto o = run_replica(plan, i);
    EXPECT_EQ(o.total_births, 0u);
    EXPECT_FALSE(o.weak_alive);
    return o.extinction_time.value();
  });
  EXPECT_NEAR(m.mean, 11.0 / 6.0, 4 * m.se);
}

TEST(RunReplica, IsDeterministic) {
  auto plan = plan_on(make_tree_srw(3), 1.3, 6.0);
  for (std::uint64_t i : {0u, 5u, 77u}) {
    RunOptions opt;
    opt.capture_final = true;
    auto a = run_replica(plan, i, opt);
    auto b = run_replica(plan, i, opt);
    EXPECT_EQ(a.trajectory_hash, b.trajectory_hash);
    EXPECT_EQ(a.total_births, b.total_births);
    EXPECT_EQ(a.extinction_time, b.extinction_time);
    EXPECT_EQ(a.final_state, b.final_state);
  }
  EXPECT_NE(run_replica(plan, 1).trajectory_hash, run_replica(plan, 2).trajectory_hash);
}

TEST(RunReplica, WeakSurvivalIsMonotoneInHorizon) {
  auto shorter = plan_on(make_zd_srw(1), 1.1, 4.0);
  auto longer = shorter;
  longer.horizon = 12.0;
  for (std::uint64_t i = 0; i < 300; ++i) {
    if (run_replica(longer, i).weak_alive) EXPECT_TRUE(run_replica(shorter, i).weak_alive) << i;
  }
}

TEST(RunReplica, CheckpointsDefaultToGeometricGrid) {
  auto plan = plan_on(make_loop(), 1.0, 16.0);
  EXPECT_EQ(plan.checkpoint_times(), (std::vector<double>{1, 2, 4, 8, 16}));
}

TEST(RunReplica, CeilingCountsAsAliveAndIsFlagged) {
  auto plan = plan_on(make_loop(), 4.0, 100.0);
  plan.population_ceiling = 50;
  std::size_t hits = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto o = run_replica(plan, i);
    if (o.ceiling_hit) {
      ++hits;
      EXPECT_TRUE(o.weak_alive);
      EXPECT_TRUE(o.local_alive);
      EXPECT_FALSE(o.extinction_time);
    }
  }
  EXPECT_GT(hits, 100u);
}

TEST(RunReplica, SubcriticalLineDiesOut) {
  auto plan = plan_on(make_zd_srw(1), 0.5, 50.0, 10000);
  auto e = estimate_survival(plan, SurvivalMode::weak);
  EXPECT_LT(e.p_hat, 0.01);
}

TEST(RunReplica, SupercriticalLineSurvivesLocally) {
  // Population ceiling lowered to keep the runtime small; a replica that
  // reaches 10^4 particles survives with probability 1 - 2^-10000.
  for (double horizon : {25.0, 50.0}) {
    auto plan = plan_on(make_zd_srw(1), 2.0, horizon, 400);
    plan.population_ceiling = 10000;
    auto e = estimate_survival(plan, SurvivalMode::local);
    EXPECT_GT(e.ci_lo, 0.3) << horizon;
  }
}

TEST(RunReplica, LocalFlagLooksAtTheWholeSecondHalf) {
  auto plan = plan_on(make_zd_srw(1), 1.0, 8.0);
  for (std::uint64_t i = 0; i < 200; ++i) {
    RunOptions opt;
    std::ostringstream log;
    opt.log = &log;
    auto o = run_replica(plan, i, opt);
    // Replay the log to find whether the origin was occupied during [4, 8].
    std::map<std::string, long> count{{"(0)", 1}};
    bool seen = false;
    double t;
    std::string kind, where;
    unsigned gen;
    std::istringstream in(log.str());
    bool occupied_at_half_checked = false;
    while (in >> t >> kind >> where >> gen) {
      if (!occupied_at_half_checked && t > 4.0) {
        seen = seen || count["(0)"] > 0;
        occupied_at_half_checked = true;
      }
      if (kind == "death") --count[where];
      if (kind == "birth") ++count[where];
      if (t >= 4.0 && count["(0)"] > 0) seen = true;
    }
    if (!occupied_at_half_checked) seen = seen || count["(0)"] > 0;
    EXPECT_EQ(o.local_alive, seen) << i;
  }
}

TEST(Coupling, NoCapsGivesFourIdenticalTrajectories) {
  auto plan = plan_on(make_zd_srw(2), 1.4, 6.0);
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto c = coupled_run(plan, i, true);
    for (const auto& p : c.processes) {
      EXPECT_EQ(p.trajectory_hash, c.processes[0].trajectory_hash);
      EXPECT_EQ(p.final_state, c.processes[0].final_state);
    }
    EXPECT_TRUE(c.domination_held);
  }
}

TEST(Coupling, OrderChainHoldsOnEveryReplica) {
  auto plan = plan_on(make_zd_srw(1), 1.5, 8.0);
  plan.site_cap = 3;
  plan.generation_cap = 5;
  std::size_t distinct = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    auto c = coupled_run(plan, i, true);
    ASSERT_TRUE(c.domination_held) << i;
    const auto& p = c.processes;
    EXPECT_TRUE(p[1].final_state->dominated_by(*p[0].final_state));
    EXPECT_TRUE(p[2].final_state->dominated_by(*p[0].final_state));
    EXPECT_TRUE(p[3].final_state->dominated_by(*p[1].final_state));
    EXPECT_TRUE(p[3].final_state->dominated_by(*p[2].final_state));
    EXPECT_LE(p[2].max_generation, 5u);
    distinct += p[3].trajectory_hash != p[0].trajectory_hash;
  }
  EXPECT_GT(distinct, 100u);
}

TEST(Coupling, BirthCapIsInvisibleWhileBirthsStayBelowIt) {
  auto plan = plan_on(make_zd_srw(1), 1.2, 5.0);
  const std::uint64_t nbar = 8;
  std::vector<ProcessRule> rules{{1.2, nbar, kUnbounded, kUnbounded}, {1.2, nbar, kUnbounded, nbar}};
  std::size_t small = 0, large = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    CoupledEngine e(plan, rules, i);
    auto o = e.run();
    if (o[0].total_births <= nbar) {
      ++small;
      EXPECT_EQ(o[0].trajectory_hash, o[1].trajectory_hash) << i;
    } else {
      ++large;
      EXPECT_EQ(o[1].total_births, nbar);
      EXPECT_NE(o[0].trajectory_hash, o[1].trajectory_hash) << i;
    }
  }
  EXPECT_GT(small, 50u);
  EXPECT_GT(large, 50u);
}

TEST(Coupling, SurvivalIsMonotoneInLambdaAndM) {
  auto plan = plan_on(make_zd_srw(1), 1.0, 10.0, 300);
  std::vector<ProcessRule> in_m;
  for (std::uint64_t m : std::vector<std::uint64_t>{1, 2, 4, kUnbounded}) in_m.push_back({2.0, m, kUnbounded, kUnbounded});
  auto by_m = estimate_survival_lanes(plan, in_m, SurvivalMode::weak);
  EXPECT_EQ(by_m.order_violations, 0u);
  std::vector<ProcessRule> in_lambda;
  for (double l : {0.8, 1.0, 1.5, 2.5}) in_lambda.push_back({l, 2, kUnbounded, kUnbounded});
  auto by_lambda = estimate_survival_lanes(plan, in_lambda, SurvivalMode::local);
  EXPECT_EQ(by_lambda.order_violations, 0u);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_LE(by_m.estimates[i - 1].successes, by_m.estimates[i].successes);
    EXPECT_LE(by_lambda.estimates[i - 1].successes, by_lambda.estimates[i].successes);
  }
}

TEST(EstimateSurvival, ZeroLambdaNeverSurvives) {
  // A lone particle outlives T = 60 with probability e^-60.
  auto plan = plan_on(make_zd_srw(1), 0.0, 60.0, 500);
  auto e = estimate_survival(plan, SurvivalMode::weak);
  EXPECT_EQ(e.successes, 0u);
  EXPECT_EQ(e.p_hat, 0.0);
}

TEST(EstimateSurvival, BranchingProcessOnALoop) {
  // Linear birth-death with rates 2 and 1 survives with probability 1/2.  A
  // population of 1000 dies out with probability 2^-1000, so the ceiling
  // does not bias the estimate.
  auto plan = plan_on(make_loop(), 2.0, 60.0, 10000);
  plan.population_ceiling = 1000;
  auto e = estimate_survival(plan, SurvivalMode::weak);
  EXPECT_LE(e.ci_lo, 0.5);
  EXPECT_GE(e.ci_hi, 0.5);
}

TEST(EstimateSurvival, CapOneSurvivesLessOften) {
  auto plan = plan_on(make_zd_srw(1), 3.0, 10.0, 400);
  plan.population_ceiling = 5000;
  auto capped = plan;
  capped.site_cap = 1;
  EXPECT_LE(estimate_survival(capped, SurvivalMode::weak).p_hat, estimate_survival(plan, SurvivalMode::weak).p_hat);
}

TEST(EstimateSurvival, IndependentOfThreadCount) {
  auto plan = plan_on(make_zd_srw(2), 1.2, 5.0, 200);
  setenv("BRWLAB_THREADS", "1", 1);
  auto one = estimate_survival(plan, SurvivalMode::local);
  setenv("BRWLAB_THREADS", "3", 1);
  auto three = estimate_survival(plan, SurvivalMode::local);
  unsetenv("BRWLAB_THREADS");
  EXPECT_EQ(one.successes, three.successes);
}

TEST(EstimateSurvival, NeedsOneHundredReplicas) {
  auto plan = plan_on(make_loop(), 1.0, 1.0, 99);
  EXPECT_THROW(estimate_survival(plan, SurvivalMode::weak), SimulationError);
}

TEST(Wilson, IntervalContainsEstimate) {
  for (std::size_t n : {1u, 10u, 100u, 10000u})
    for (std::size_t s = 0; s <= n; s += std::max<std::size_t>(1, n / 7)) {
      auto e = wilson(s, n);
      EXPECT_LE(0.0, e.ci_lo);
      EXPECT_LE(e.ci_lo, e.p_hat);
      EXPECT_LE(e.p_hat, e.ci_hi);
      EXPECT_LE(e.ci_hi, 1.0);
    }
  // 50/100: 0.5 +- 0.0962 (closed form).
  auto e = wilson(50, 100);
  EXPECT_NEAR(e.ci_hi - 0.5, 0.09617, 1e-4);
}

TEST(MeanField, OriginOccupancyMatchesSeries) {
  // e^{-2} I_0(3), the occupancy of the origin at t = 2 for lambda = 1.5.
  const double oracle = 0.660543447027202;
  auto plan = plan_on(make_zd_srw(1), 1.5, 2.0);
  plan.checkpoints = {2.0};
  const auto m = sample(10000, [&](std::size_t i) {
    return static_cast<double>(run_replica(plan, i).checkpoints.at(0).marked_count);
  });
  EXPECT_NEAR(m.mean, oracle, 4 * m.se);
}

TEST(MeanField, BirthsBoundedByPureBirthProcess) {
  // Pure birth at rate K lambda from one particle: E N_T = e^{K lambda T} - 1.
  auto plan = plan_on(make_zd_srw(1), 1.5, 2.0);
  const auto m = sample(10000, [&](std::size_t i) { return static_cast<double>(run_replica(plan, i).total_births); });
  EXPECT_LE(m.mean, std::expm1(3.0) + 4 * m.se);
}

TEST(ScanCritical, LoopBracketsOne) {
  auto plan = plan_on(make_loop(), 1.0, 100.0, 400);
  plan.population_ceiling = 1000;
  auto r = scan_critical(plan, SurvivalMode::weak, 0.5, 2.0, 5);
  ASSERT_TRUE(r.separated) << r.note;
  EXPECT_LT(r.hi - r.lo, 0.1);
  EXPECT_LT(std::abs(r.midpoint() - 1.0), 0.1);
  EXPECT_EQ(r.probes.size(), 7u);
}

TEST(ScanCritical, UnseparatedBracketIsReported) {
  auto plan = plan_on(make_loop(), 1.0, 20.0, 100);
  auto r = scan_critical(plan, SurvivalMode::weak, 0.1, 0.2, 5);
  EXPECT_FALSE(r.separated);
  EXPECT_EQ(r.probes.size(), 2u);
  EXPECT_THROW(scan_critical(plan, SurvivalMode::weak, 2.0, 1.0, 3), SimulationError);
}

TEST(SurvivalCsv, HeaderAndRow) {
  std::ostringstream os;
  write_survival_header(os);
  write_survival_row(os, 1.5, kUnbounded, SurvivalMode::local, wilson(0, 100), 50.0);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "lambda,m,mode,replicas,successes,p_hat,ci_lo,ci_hi,horizon");
  EXPECT_EQ(os.str().substr(os.str().find('\n') + 1, 18), "1.5,inf,local,100,");
}
