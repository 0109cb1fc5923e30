#pragma once

// Continuous-time branching random walks and their truncations.
//
// Each particle dies at rate 1 and breeds at rate lambda k(x), placing its
// child on y with probability mu(x, y) / k(x).  Truncated variants suppress
// some births: a site cap m (BRW_m; m = 1 is the contact process), a
// generation cap n0 (eta-bar) and a total-birth cap n-bar (eta-hat).
//
// Several processes ("lanes") can be driven by one event stream.  The stream
// is a lazily sampled graphical representation: at every site x the
// particles are ranked by generation, and for each rank i there is a death
// clock of rate 1 and a birth clock of rate lambda_max * K whose arrows
// carry a target drawn from mu(x, .) / K (no target on the leftover mass)
// and a uniform mark.  A lane reacts to a clock at (x, i) only if it holds
// at least i particles at x, so only ranks up to the sitewise maximum over
// lanes ever need sampling.  A lane with rate lambda accepts a birth arrow
// iff mark * lambda_max < lambda; capped lanes suppress the birth when
// their rule forbids it.  Under this coupling the sitewise order
//   eta-bar^m <= eta^m <= eta  and  eta-bar^m <= eta-bar <= eta
// holds pathwise, as does monotonicity in m and lambda.

#include "brwlab/atlas.hpp"
#include "brwlab/csv.hpp"
#include "brwlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <thread>

namespace brwlab {

inline constexpr std::uint64_t kUnbounded = std::numeric_limits<std::uint64_t>::max();

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite configuration eta in N^X: sparse vertex -> count.
class ParticleConfiguration {
 public:
  using Map = std::map<VertexId, std::uint64_t>;

  ParticleConfiguration() = default;
  ParticleConfiguration(std::initializer_list<std::pair<const VertexId, std::uint64_t>> init) {
    for (const auto& [v, n] : init) add(v, n);
  }

  static ParticleConfiguration single(const VertexId& v, std::uint64_t n = 1) {
    ParticleConfiguration c;
    c.add(v, n);
    return c;
  }

  /// Adds n particles at v; `k` is k(v), kept in the cached load.
  void add(const VertexId& v, std::uint64_t n = 1, double k = 0.0) {
    if (n == 0) return;
    counts_[v] += n;
    population_ += n;
    load_ += static_cast<double>(n) * k;
  }

  std::uint64_t count(const VertexId& v) const {
    auto it = counts_.find(v);
    return it == counts_.end() ? 0 : it->second;
  }

  std::uint64_t population() const noexcept { return population_; }
  /// Cached sum_x eta(x) k(x), valid when every add() passed k(x).
  double cached_load() const noexcept { return load_; }
  bool empty() const noexcept { return population_ == 0; }
  const Map& counts() const noexcept { return counts_; }

  /// sum_x eta(x) k(x)
  double load(const WeightedGraph& g) const {
    double s = 0.0;
    for (const auto& [v, n] : counts_) s += static_cast<double>(n) * g.total_weight(v);
    return s;
  }

  /// Sitewise eta <= other.
  bool dominated_by(const ParticleConfiguration& other) const {
    return std::all_of(counts_.begin(), counts_.end(), [&](const auto& kv) { return kv.second <= other.count(kv.first); });
  }

  friend bool operator==(const ParticleConfiguration& a, const ParticleConfiguration& b) { return a.counts_ == b.counts_; }

 private:
  Map counts_;
  std::uint64_t population_ = 0;
  double load_ = 0.0;
};

/// Suppression rules and rate of one process.
struct ProcessRule {
  double lambda = 1.0;
  std::uint64_t site_cap = kUnbounded;        // m
  std::uint64_t generation_cap = kUnbounded;  // n0
  std::uint64_t birth_cap = kUnbounded;       // n-bar
};

struct SimulationPlan {
  GraphPtr graph;
  double lambda = 1.0;
  std::uint64_t site_cap = kUnbounded;
  std::uint64_t generation_cap = kUnbounded;
  std::uint64_t birth_cap = kUnbounded;
  double horizon = 10.0;
  ParticleConfiguration initial;
  /// x0 for local survival; defaults to the first initially occupied vertex.
  std::optional<VertexId> marked;
  std::uint64_t seed = 0;
  std::size_t replicas = 1000;
  /// Empty: geometric grid T/16, T/8, T/4, T/2, T.
  std::vector<double> checkpoints;
  std::uint64_t population_ceiling = 1'000'000;
  /// Rate of the birth clocks; defaults to the largest lane lambda.  Fixing
  /// it across runs gives common random numbers in lambda.
  std::optional<double> driver_lambda;

  ProcessRule rule() const { return ProcessRule{lambda, site_cap, generation_cap, birth_cap}; }

  std::vector<double> checkpoint_times() const {
    if (!checkpoints.empty()) return checkpoints;
    return {horizon / 16, horizon / 8, horizon / 4, horizon / 2, horizon};
  }

  VertexId marked_vertex() const {
    if (marked) return *marked;
    if (initial.empty()) return graph->origin();
    return initial.counts().begin()->first;
  }
};

struct Checkpoint {
  double time = 0.0;
  std::uint64_t population = 0;
  std::uint64_t marked_count = 0;
};

struct ReplicaOutcome {
  /// Time the population hit zero; nullopt means alive when the run stopped.
  std::optional<double> extinction_time;
  std::uint64_t total_births = 0;
  std::uint32_t max_generation = 0;
  std::vector<Checkpoint> checkpoints;
  bool weak_alive = false;
  bool local_alive = false;
  bool ceiling_hit = false;
  /// The run stopped before the horizon because the requested flag was settled.
  bool stopped_early = false;
  std::uint64_t events = 0;
  /// Hash of this lane's sequence of state changes.
  std::uint64_t trajectory_hash = 0;
  std::optional<ParticleConfiguration> final_state;
};

enum class SurvivalMode { weak, local };

inline const char* to_string(SurvivalMode m) { return m == SurvivalMode::weak ? "weak" : "local"; }

enum class EventKind { death, birth, suppressed, null };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::death: return "death";
    case EventKind::birth: return "birth";
    case EventKind::suppressed: return "suppressed";
    default: return "null";
  }
}

struct StepEvent {
  double time = 0.0;
  double elapsed = 0.0;
  /// Kind as seen by lane 0.
  EventKind kind = EventKind::null;
  std::uint32_t site = 0;
  std::optional<std::uint32_t> target;
  std::uint32_t generation = 0;
};

struct RunOptions {
  /// Retire a lane once this flag is settled.
  std::optional<SurvivalMode> stop_when_settled;
  /// (smaller, larger) lane pairs checked sitewise after every event.
  std::vector<std::pair<std::size_t, std::size_t>> domination;
  bool capture_final = false;
  /// Line-per-event log of lane 0: "time kind vertex generation".
  std::ostream* log = nullptr;
};

namespace detail {

/// Particles at one site, grouped by generation in increasing order.
struct SiteStack {
  std::vector<std::pair<std::uint32_t, std::uint64_t>> by_generation;
  std::uint64_t total = 0;

  std::uint32_t generation_of_rank(std::uint64_t rank) const {
    std::uint64_t seen = 0;
    for (const auto& [g, n] : by_generation) {
      seen += n;
      if (seen >= rank) return g;
    }
    return by_generation.back().first;
  }

  void remove_rank(std::uint64_t rank) {
    std::uint64_t seen = 0;
    for (auto it = by_generation.begin(); it != by_generation.end(); ++it) {
      seen += it->second;
      if (seen >= rank) {
        if (--it->second == 0) by_generation.erase(it);
        --total;
        return;
      }
    }
  }

  void add(std::uint32_t generation, std::uint64_t n = 1) {
    auto it = std::lower_bound(by_generation.begin(), by_generation.end(), generation,
                               [](const auto& p, std::uint32_t g) { return p.first < g; });
    if (it != by_generation.end() && it->first == generation) it->second += n;
    else by_generation.insert(it, {generation, n});
    total += n;
  }
};

}  // namespace detail

/// Event-driven simulator for one or more coupled lanes.
class CoupledEngine {
 public:
  CoupledEngine(const SimulationPlan& plan, std::vector<ProcessRule> rules, std::uint64_t replica_index,
                RunOptions options = {})
      : plan_(plan), atlas_(plan.graph), rng_(replica_stream(plan.seed, replica_index)), options_(std::move(options)) {
    if (!plan.graph) throw SimulationError("simulation plan has no graph");
    if (rules.empty()) throw SimulationError("at least one process is required");
    if (!(plan.horizon >= 0.0)) throw SimulationError("horizon must be nonnegative");
    k_bound_ = plan.graph->weight_bound();
    double max_lambda = 0.0;
    for (const auto& r : rules) {
      if (!(r.lambda >= 0.0)) throw SimulationError("lambda must be nonnegative");
      if (r.site_cap == 0) throw SimulationError("site cap must be >= 1");
      max_lambda = std::max(max_lambda, r.lambda);
    }
    driver_lambda_ = plan.driver_lambda.value_or(max_lambda);
    if (driver_lambda_ < max_lambda) throw SimulationError("driver lambda below a lane lambda");
    marked_ = atlas_.intern(plan.marked_vertex());
    checkpoint_times_ = plan.checkpoint_times();
    std::sort(checkpoint_times_.begin(), checkpoint_times_.end());
    lanes_.resize(rules.size());
    for (std::size_t l = 0; l < rules.size(); ++l) lanes_[l].rule = rules[l];
    for (const auto& [v, n] : plan.initial.counts()) {
      const auto s = atlas_.intern(v);
      grow();
      for (auto& lane : lanes_) {
        const auto placed = std::min<std::uint64_t>(n, lane.rule.site_cap);
        lane.sites[s].add(0, placed);
        lane.population += placed;
      }
      refresh_driver(s);
    }
    for (auto& lane : lanes_) {
      if (lane.population == 0) lane.outcome.extinction_time = 0.0;
      if (lane.population > plan.population_ceiling) hit_ceiling(lane);
    }
  }

  double time() const noexcept { return time_; }
  std::size_t lanes() const noexcept { return lanes_.size(); }
  std::uint64_t population(std::size_t lane = 0) const { return lanes_.at(lane).population; }
  std::uint64_t count(std::size_t lane, const VertexId& v) const {
    auto s = atlas_.find(v);
    if (!s || *s >= lanes_.at(lane).sites.size()) return 0;
    return lanes_[lane].sites[*s].total;
  }
  bool domination_held() const noexcept { return dominated_; }
  const Atlas& atlas() const noexcept { return atlas_; }

  ParticleConfiguration configuration(std::size_t lane = 0) const {
    ParticleConfiguration c;
    const auto& l = lanes_.at(lane);
    for (std::uint32_t s = 0; s < l.sites.size(); ++s)
      if (l.sites[s].total > 0) c.add(atlas_.vertex(s), l.sites[s].total, plan_.graph->total_weight(atlas_.vertex(s)));
    return c;
  }

  /// Generation multiset at a site, for invariant checks.
  std::uint64_t generations_total(std::size_t lane) const {
    std::uint64_t n = 0;
    for (const auto& st : lanes_.at(lane).sites)
      for (const auto& [g, c] : st.by_generation) n += c;
    return n;
  }

  bool finished() const noexcept { return finished_; }

  /// One Gillespie step of the driving stream.  Throws on an empty driver.
  StepEvent step() {
    if (slots_.empty()) throw SimulationError("step on an empty configuration");
    const double rate = static_cast<double>(slots_.size()) * (1.0 + driver_lambda_ * k_bound_);
    StepEvent ev;
    ev.elapsed = rng_.exponential(rate);
    ev.time = time_ + ev.elapsed;
    if (!half_checked_ && plan_.horizon / 2 < ev.time) check_half();
    apply_event(ev);
    return ev;
  }

  /// Runs to the horizon (or until every lane is extinct or retired) and
  /// returns one outcome per lane.
  std::vector<ReplicaOutcome> run() {
    const double half = plan_.horizon / 2;
    std::size_t next_cp = 0;
    while (!finished_) {
      if (slots_.empty()) {
        while (next_cp < checkpoint_times_.size()) record_checkpoint(checkpoint_times_[next_cp++]);
        break;
      }
      const double rate = static_cast<double>(slots_.size()) * (1.0 + driver_lambda_ * k_bound_);
      const double t_next = time_ + rng_.exponential(rate);
      // The state is constant on [time_, t_next).
      while (next_cp < checkpoint_times_.size() && checkpoint_times_[next_cp] < std::min(t_next, plan_.horizon))
        record_checkpoint(checkpoint_times_[next_cp++]);
      if (!half_checked_ && half < t_next) check_half();
      if (finished_) break;
      if (t_next > plan_.horizon) {
        while (next_cp < checkpoint_times_.size() && checkpoint_times_[next_cp] <= plan_.horizon)
          record_checkpoint(checkpoint_times_[next_cp++]);
        time_ = plan_.horizon;
        break;
      }
      StepEvent ev;
      ev.elapsed = t_next - time_;
      ev.time = t_next;
      apply_event(ev);
      if (options_.log) log_event(ev);
    }
    std::vector<ReplicaOutcome> out;
    out.reserve(lanes_.size());
    for (std::size_t l = 0; l < lanes_.size(); ++l) {
      auto& lane = lanes_[l];
      if (!lane.retired) {
        lane.outcome.weak_alive = lane.population > 0 || lane.outcome.ceiling_hit;
      }
      lane.outcome.total_births = lane.births;
      lane.outcome.max_generation = lane.max_generation;
      lane.outcome.events = events_;
      lane.outcome.trajectory_hash = lane.hash;
      if (options_.capture_final) lane.outcome.final_state = configuration(l);
      out.push_back(lane.outcome);
    }
    return out;
  }

 private:
  struct Slot {
    std::uint32_t site;
    std::uint32_t j;
  };

  struct Lane {
    ProcessRule rule;
    std::vector<detail::SiteStack> sites;
    std::uint64_t population = 0;
    std::uint64_t births = 0;
    std::uint32_t max_generation = 0;
    std::uint64_t hash = 0x6a09e667f3bcc909ULL;
    bool retired = false;
    ReplicaOutcome outcome;
  };

  void grow() {
    const auto n = atlas_.size();
    for (auto& lane : lanes_)
      if (lane.sites.size() < n) lane.sites.resize(n);
    if (driver_.size() < n) {
      driver_.resize(n, 0);
      site_slots_.resize(n);
    }
  }

  void refresh_driver(std::uint32_t s) {
    std::uint64_t d = 0;
    for (const auto& lane : lanes_)
      if (!lane.retired) d = std::max(d, lane.sites[s].total);
    auto& mine = site_slots_[s];
    while (mine.size() < d) {
      mine.push_back(static_cast<std::uint32_t>(slots_.size()));
      slots_.push_back(Slot{s, static_cast<std::uint32_t>(mine.size() - 1)});
    }
    while (mine.size() > d) {
      const auto p = mine.back();
      mine.pop_back();
      const auto last = static_cast<std::uint32_t>(slots_.size() - 1);
      if (p != last) {
        const Slot moved = slots_[last];
        slots_[p] = moved;
        site_slots_[moved.site][moved.j] = p;
      }
      slots_.pop_back();
    }
    driver_[s] = d;
  }

  void touch(Lane& lane, std::uint32_t site, std::uint64_t kind) {
    lane.hash = mix64(lane.hash ^ (events_ * 0x100000001b3ULL + (static_cast<std::uint64_t>(site) << 2) + kind));
  }

  void apply_event(StepEvent& ev) {
    time_ = ev.time;
    ++events_;
    const Slot slot = slots_[rng_.below(slots_.size())];
    const std::uint32_t x = slot.site;
    const std::uint64_t rank = 1 + rng_.below(driver_[x]);
    const double u = rng_.uniform() * (1.0 + driver_lambda_ * k_bound_);
    ev.site = x;
    ev.kind = EventKind::null;

    if (u < 1.0) {
      for (std::size_t l = 0; l < lanes_.size(); ++l) {
        auto& lane = lanes_[l];
        auto& st = lane.sites[x];
        if (lane.retired || st.total < rank) continue;
        if (l == 0) {
          ev.kind = EventKind::death;
          ev.generation = st.generation_of_rank(rank);
        }
        st.remove_rank(rank);
        --lane.population;
        touch(lane, x, 0);
        if (lane.population == 0) lane.outcome.extinction_time = time_;
      }
      refresh_driver(x);
      check_domination(x);
      settle_extinctions();
      return;
    }

    const double w = (u - 1.0) / driver_lambda_;
    const double mark = rng_.uniform();
    const auto& arcs = atlas_.arcs(x);
    grow();
    const auto hit = std::upper_bound(arcs.begin(), arcs.end(), w,
                                      [](double value, const Atlas::Arc& a) { return value < a.cumulative; });
    if (hit == arcs.end()) return;
    const std::uint32_t y = hit->to;
    ev.target = y;
    for (std::size_t l = 0; l < lanes_.size(); ++l) {
      auto& lane = lanes_[l];
      auto& from = lane.sites[x];
      if (lane.retired || from.total < rank || !(mark * driver_lambda_ < lane.rule.lambda)) continue;
      const auto child_gen = from.generation_of_rank(rank) + 1;
      auto& to = lane.sites[y];
      const bool blocked = child_gen > lane.rule.generation_cap || lane.births >= lane.rule.birth_cap ||
                           to.total >= lane.rule.site_cap;
      if (l == 0) {
        ev.generation = child_gen;
        ev.kind = blocked ? EventKind::suppressed : EventKind::birth;
      }
      if (blocked) continue;
      to.add(child_gen);
      ++lane.population;
      ++lane.births;
      lane.max_generation = std::max(lane.max_generation, child_gen);
      touch(lane, y, 1);
      if (y == marked_ && half_checked_) mark_local(lane);
      if (lane.population > plan_.population_ceiling) hit_ceiling(lane);
    }
    refresh_driver(y);
    check_domination(y);
    maybe_finish();
  }

  /// x0 is occupied at some time in [T/2, T].
  void mark_local(Lane& lane) {
    lane.outcome.local_alive = true;
    if (options_.stop_when_settled == SurvivalMode::local) {
      lane.outcome.weak_alive = true;
      retire(lane);
    }
  }

  void check_half() {
    half_checked_ = true;
    for (auto& lane : lanes_)
      if (!lane.retired && marked_ < lane.sites.size() && lane.sites[marked_].total > 0) mark_local(lane);
  }

  void hit_ceiling(Lane& lane) {
    lane.outcome.ceiling_hit = true;
    lane.outcome.weak_alive = true;
    lane.outcome.local_alive = true;
    retire(lane);
  }

  void retire(Lane& lane) {
    if (lane.retired) return;
    lane.retired = true;
    lane.outcome.stopped_early = true;
    // The driver may shrink now; refresh lazily on the sites this lane held.
    for (std::uint32_t s = 0; s < lane.sites.size(); ++s)
      if (lane.sites[s].total > 0) refresh_driver(s);
    maybe_finish();
  }

  void settle_extinctions() {
    for (auto& lane : lanes_) {
      if (!lane.retired && lane.population == 0 && options_.stop_when_settled) {
        lane.outcome.weak_alive = false;
        lane.retired = true;
        lane.outcome.stopped_early = true;
      }
    }
    maybe_finish();
  }

  void maybe_finish() {
    if (std::all_of(lanes_.begin(), lanes_.end(), [](const Lane& l) { return l.retired; })) finished_ = true;
  }

  void record_checkpoint(double t) {
    for (auto& lane : lanes_) {
      if (lane.retired) continue;
      const std::uint64_t at_mark = marked_ < lane.sites.size() ? lane.sites[marked_].total : 0;
      lane.outcome.checkpoints.push_back(Checkpoint{t, lane.population, at_mark});
    }
  }

  void check_domination(std::uint32_t s) {
    for (auto [small, large] : options_.domination) {
      if (lanes_[small].retired || lanes_[large].retired) continue;
      if (lanes_[small].sites[s].total > lanes_[large].sites[s].total) dominated_ = false;
    }
  }

  void log_event(const StepEvent& ev) {
    *options_.log << fmt_double(ev.time) << ' ' << to_string(ev.kind) << ' '
                  << plan_.graph->format(atlas_.vertex(ev.target.value_or(ev.site))) << ' ' << ev.generation << '\n';
  }

  SimulationPlan plan_;
  Atlas atlas_;
  Rng rng_;
  RunOptions options_;
  double k_bound_ = 1.0;
  double driver_lambda_ = 0.0;
  double time_ = 0.0;
  std::uint64_t events_ = 0;
  std::uint32_t marked_ = 0;
  std::vector<double> checkpoint_times_;
  std::vector<Lane> lanes_;
  std::vector<std::uint64_t> driver_;
  std::vector<std::vector<std::uint32_t>> site_slots_;
  std::vector<Slot> slots_;
  bool dominated_ = true;
  bool finished_ = false;
  bool half_checked_ = false;
};

// ---------------------------------------------------------------------------
// Replicas

/// Plain (single-process) run of replica `index`.
inline ReplicaOutcome run_replica(const SimulationPlan& plan, std::uint64_t index, RunOptions options = {}) {
  CoupledEngine engine(plan, {plan.rule()}, index, std::move(options));
  return engine.run().front();
}

struct CoupledOutcome {
  /// eta, eta^m, eta-bar, eta-bar^m
  std::array<ReplicaOutcome, 4> processes;
  bool domination_held = true;
};

/// eta, eta^m, eta-bar and eta-bar^m driven by one event stream, with the
/// sitewise order chain checked after every event.
inline CoupledOutcome coupled_run(const SimulationPlan& plan, std::uint64_t index, bool capture_final = false) {
  const double lambda = plan.lambda;
  std::vector<ProcessRule> rules{
      {lambda, kUnbounded, kUnbounded, kUnbounded},
      {lambda, plan.site_cap, kUnbounded, kUnbounded},
      {lambda, kUnbounded, plan.generation_cap, kUnbounded},
      {lambda, plan.site_cap, plan.generation_cap, kUnbounded},
  };
  RunOptions opt;
  opt.domination = {{1, 0}, {2, 0}, {3, 1}, {3, 2}};
  opt.capture_final = capture_final;
  CoupledEngine engine(plan, rules, index, opt);
  auto outs = engine.run();
  CoupledOutcome result;
  for (std::size_t i = 0; i < 4; ++i) result.processes[i] = std::move(outs[i]);
  result.domination_held = engine.domination_held();
  return result;
}

// ---------------------------------------------------------------------------
// Monte Carlo aggregation

struct SurvivalEstimate {
  std::size_t replicas = 0;
  std::size_t successes = 0;
  std::size_t ceiling_hits = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Wilson score interval at 95%.
inline SurvivalEstimate wilson(std::size_t successes, std::size_t n) {
  SurvivalEstimate e;
  e.replicas = n;
  e.successes = successes;
  if (n == 0) {
    e.ci_hi = 1.0;
    return e;
  }
  constexpr double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double denom = 1.0 + z * z / nn;
  const double center = (p + z * z / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
  e.p_hat = p;
  e.ci_lo = std::clamp(center - half, 0.0, 1.0);
  e.ci_hi = std::clamp(center + half, 0.0, 1.0);
  e.ci_lo = std::min(e.ci_lo, p);
  e.ci_hi = std::max(e.ci_hi, p);
  return e;
}

/// Worker count from BRWLAB_THREADS, else the hardware concurrency.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("BRWLAB_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on up to thread_count() workers.  fn must
/// write only to slot i of its own output, so results never depend on
/// scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline bool flag_of(const ReplicaOutcome& o, SurvivalMode mode) {
  return mode == SurvivalMode::weak ? o.weak_alive : o.local_alive;
}

/// Monte Carlo frequency of the weak or local survival flag.
inline SurvivalEstimate estimate_survival(const SimulationPlan& plan, SurvivalMode mode) {
  if (plan.replicas < 100) throw SimulationError("survival estimates need at least 100 replicas");
  std::vector<char> flags(plan.replicas, 0), ceilings(plan.replicas, 0);
  RunOptions opt;
  opt.stop_when_settled = mode;
  parallel_for(plan.replicas, [&](std::size_t i) {
    auto o = run_replica(plan, i, opt);
    flags[i] = flag_of(o, mode);
    ceilings[i] = o.ceiling_hit;
  });
  std::size_t s = 0, c = 0;
  for (std::size_t i = 0; i < plan.replicas; ++i) {
    s += static_cast<std::size_t>(flags[i]);
    c += static_cast<std::size_t>(ceilings[i]);
  }
  auto e = wilson(s, plan.replicas);
  e.ceiling_hits = c;
  return e;
}

struct LaneSweep {
  std::vector<SurvivalEstimate> estimates;
  /// Replicas where some lane survived while a later (larger) lane did not.
  std::size_t order_violations = 0;
};

/// Survival of several coupled processes on shared streams.  Lanes should be
/// listed in increasing order (e.g. increasing m or lambda); order_violations
/// counts replicas whose flags are not nondecreasing along that list.
inline LaneSweep estimate_survival_lanes(const SimulationPlan& plan, const std::vector<ProcessRule>& rules,
                                         SurvivalMode mode) {
  const std::size_t k = rules.size();
  std::vector<char> flags(plan.replicas * k, 0);
  RunOptions opt;
  opt.stop_when_settled = mode;
  parallel_for(plan.replicas, [&](std::size_t i) {
    CoupledEngine engine(plan, rules, i, opt);
    auto outs = engine.run();
    for (std::size_t l = 0; l < k; ++l) flags[i * k + l] = flag_of(outs[l], mode);
  });
  LaneSweep sweep;
  for (std::size_t l = 0; l < k; ++l) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < plan.replicas; ++i) s += static_cast<std::size_t>(flags[i * k + l]);
    sweep.estimates.push_back(wilson(s, plan.replicas));
  }
  for (std::size_t i = 0; i < plan.replicas; ++i)
    for (std::size_t l = 1; l < k; ++l)
      if (flags[i * k + l - 1] && !flags[i * k + l]) {
        ++sweep.order_violations;
        break;
      }
  return sweep;
}

struct ScanProbe {
  double lambda = 0.0;
  SurvivalEstimate estimate;
};

struct ScanResult {
  bool separated = false;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<ScanProbe> probes;
  std::string note;

  double midpoint() const { return 0.5 * (lo + hi); }
};

/// Bisection for the finite-horizon critical value: a probe is called
/// supercritical when its survival frequency exceeds `threshold`.  The
/// horizon makes this a proxy biased towards larger lambda.
inline ScanResult scan_critical(SimulationPlan plan, SurvivalMode mode, double lo, double hi, int refinements,
                                double threshold = 0.05) {
  if (!(lo >= 0.0) || !(hi > lo)) throw SimulationError("scan bracket must satisfy 0 <= lo < hi");
  ScanResult r;
  r.lo = lo;
  r.hi = hi;
  r.note = "finite-horizon proxy (T=" + fmt_double(plan.horizon) + ", threshold=" + fmt_double(threshold) +
           "); biased upward";
  plan.driver_lambda = hi;
  auto probe = [&](double lambda) {
    plan.lambda = lambda;
    auto e = estimate_survival(plan, mode);
    r.probes.push_back(ScanProbe{lambda, e});
    return e;
  };
  const auto at_lo = probe(lo);
  const auto at_hi = probe(hi);
  if (!(at_lo.p_hat < threshold && at_hi.p_hat > 0.2 && at_lo.ci_hi < at_hi.ci_lo)) {
    r.note = "bracket endpoints are not separated; no bisection performed";
    return r;
  }
  r.separated = true;
  for (int i = 0; i < refinements; ++i) {
    const double mid = 0.5 * (r.lo + r.hi);
    if (probe(mid).p_hat > threshold) r.hi = mid;
    else r.lo = mid;
  }
  return r;
}

inline void write_survival_header(std::ostream& os) {
  csv_row(os, "lambda", "m", "mode", "replicas", "successes", "p_hat", "ci_lo", "ci_hi", "horizon");
}

inline std::string cap_text(std::uint64_t cap) { return cap == kUnbounded ? "inf" : std::to_string(cap); }

inline void write_survival_row(std::ostream& os, double lambda, std::uint64_t m, SurvivalMode mode,
                               const SurvivalEstimate& e, double horizon) {
  csv_row(os, lambda, cap_text(m), to_string(mode), e.replicas, e.successes, e.p_hat, e.ci_lo, e.ci_hi, horizon);
}

}  // namespace brwlab
