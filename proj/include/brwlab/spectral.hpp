#pragma once

// Perron-Frobenius eigenvalues of finite kernels, the truncation ladder
// _nR = 1 / rho(_n mu) decreasing to R_mu = lambda_s, and the expected
// occupancy E^{delta_x0}(eta_t(x)) as a Poisson-weighted series of kernel
// powers.

#include "brwlab/atlas.hpp"
#include "brwlab/csv.hpp"
#include "brwlab/kernel.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace brwlab {

class SpectralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PowerIterationOptions {
  double tol = 1e-10;
  std::size_t max_iter = 100'000;
  /// Iterate on M + shift*I; any shift > 0 removes the oscillation of
  /// periodic (e.g. bipartite) kernels without moving the PF vector.
  double shift = 1.0;
};

struct SpectralEstimate {
  double rho = 0.0;
  /// 1 / rho, +inf when rho == 0.
  double inverse_radius = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  /// ||M v - rho v||_inf / ||v||_inf at the returned vector.
  double residual = 0.0;
  bool converged = false;
  /// Collatz-Wielandt bracket min_i (Mv)_i/v_i <= rho <= max_i (Mv)_i/v_i.
  double lower_bound = 0.0;
  double upper_bound = 0.0;
};

inline SpectralEstimate pf_eigenvalue(const KernelMatrix& m, const PowerIterationOptions& opt = {}) {
  const std::size_t n = m.size();
  if (n == 0) throw SpectralError("empty kernel matrix");
  for (double v : m.values)
    if (!(v >= 0.0)) throw SpectralError("kernel matrix has a negative or NaN entry");

  SpectralEstimate est;
  std::vector<double> v(n, 1.0), mv(n), w(n);
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    m.apply(v, mv);
    double norm_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = mv[i] + opt.shift * v[i];
      norm_w = std::max(norm_w, std::abs(w[i]));
    }
    // v is normalised to ||v||_inf = 1 from the second iteration on.
    double norm_v = 0.0;
    for (double x : v) norm_v = std::max(norm_v, x);
    const double rho = norm_w / norm_v - opt.shift;
    double res = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res = std::max(res, std::abs(mv[i] - rho * v[i]));
      const double ratio = mv[i] / v[i];
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
    }
    est.rho = std::max(rho, 0.0);
    est.residual = res / norm_v;
    est.iterations = it;
    est.lower_bound = lo;
    est.upper_bound = hi;
    if (est.residual <= opt.tol) {
      est.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm_w;
  }
  est.inverse_radius = est.rho > 0.0 ? 1.0 / est.rho : std::numeric_limits<double>::infinity();
  return est;
}

/// Dense eigensolve fallback: the eigenvalue of largest real part (the
/// Perron root) and the residual of its eigenvector.  O(n^3), so only for
/// matrices of a few thousand rows.
inline SpectralEstimate pf_eigenvalue_dense(const KernelMatrix& m) {
  const auto n = static_cast<Eigen::Index>(m.size());
  if (n == 0) throw SpectralError("empty kernel matrix");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t p = m.row_start[i]; p < m.row_start[i + 1]; ++p)
      a(static_cast<Eigen::Index>(i), m.columns[p]) = m.values[p];
  double rho = 0.0;
  Eigen::VectorXd v;
  if (a.isApprox(a.transpose(), 0.0)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    rho = es.eigenvalues()(n - 1);
    v = es.eigenvectors().col(n - 1).cwiseAbs();
  } else {
    Eigen::EigenSolver<Eigen::MatrixXd> es(a);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
    rho = es.eigenvalues()(best).real();
    v = es.eigenvectors().col(best).real().cwiseAbs();
  }
  SpectralEstimate est;
  est.rho = std::max(rho, 0.0);
  const double norm = v.cwiseAbs().maxCoeff();
  est.residual = norm > 0.0 ? (a * v - est.rho * v).cwiseAbs().maxCoeff() / norm : 0.0;
  est.lower_bound = est.upper_bound = est.rho;
  est.converged = true;
  est.inverse_radius = est.rho > 0.0 ? 1.0 / est.rho : std::numeric_limits<double>::infinity();
  return est;
}

// ---------------------------------------------------------------------------

struct LadderEntry {
  int radius = 0;
  std::uint64_t vertices = 0;
  SpectralEstimate estimate;
};

struct TruncationLadder {
  std::vector<LadderEntry> entries;
  std::vector<std::string> warnings;
  /// Last computed _nR; the value acceptance checks use.
  double limit_candidate = std::numeric_limits<double>::infinity();
  /// Aitken delta-squared extrapolation of the last three values.  Heuristic.
  std::optional<double> extrapolated;
  /// Relative change below 1e-4 across the last three radii.
  bool settled = false;

  bool all_converged() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.estimate.converged; });
  }

  /// True when consecutive _nR values strictly decrease by more than `slack`.
  bool strictly_decreasing(double slack = 0.0) const {
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (!(entries[i].estimate.inverse_radius < entries[i - 1].estimate.inverse_radius - slack)) return false;
    return true;
  }
};

struct LadderOptions {
  PowerIterationOptions solver;
  /// Use the family's equitable ball quotient when it has one.
  bool use_symmetry = true;
};

inline TruncationLadder truncation_ladder(const WeightedGraph& g, const VertexId& center,
                                          const std::vector<int>& radii, const LadderOptions& opt = {}) {
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (radii[i] <= radii[i - 1]) throw SpectralError("radii must be strictly increasing");
  TruncationLadder ladder;
  for (int r : radii) {
    std::optional<KernelMatrix> m;
    if (opt.use_symmetry) m = g.ball_quotient(center, r);
    if (!m) m = ball_truncation(g, center, r);
    if (!m->strongly_connected) {
      ladder.warnings.push_back("radius " + std::to_string(r) + " skipped: ball is not strongly connected");
      continue;
    }
    ladder.entries.push_back(LadderEntry{r, m->represented_vertices(), pf_eigenvalue(*m, opt.solver)});
  }
  if (!ladder.entries.empty()) ladder.limit_candidate = ladder.entries.back().estimate.inverse_radius;
  const auto k = ladder.entries.size();
  if (k >= 3) {
    const double a = ladder.entries[k - 3].estimate.inverse_radius;
    const double b = ladder.entries[k - 2].estimate.inverse_radius;
    const double c = ladder.entries[k - 1].estimate.inverse_radius;
    const double denom = (c - b) - (b - a);
    if (std::isfinite(denom) && std::abs(denom) > 1e-300) ladder.extrapolated = c - (c - b) * (c - b) / denom;
    ladder.settled = std::abs(c - a) <= 1e-4 * std::abs(c);
  }
  return ladder;
}

inline void write_ladder_csv(std::ostream& os, const TruncationLadder& ladder) {
  csv_row(os, "radius", "vertices", "rho", "nR", "residual", "iterations");
  for (const auto& e : ladder.entries)
    csv_row(os, e.radius, e.vertices, e.estimate.rho, e.estimate.inverse_radius, e.estimate.residual,
            e.estimate.iterations);
}

// ---------------------------------------------------------------------------

struct OccupancySeries {
  VertexId source;
  VertexId target;
  double lambda = 0.0;
  double t = 0.0;
  int order = 0;
  double value = 0.0;
  /// e^{-t} sum_{n>N} (lambda K t)^n / n!, an upper bound on the omitted terms.
  double tail_bound = 0.0;
};

/// Default series truncation: max(50, ceil(3 lambda K t)).
inline int default_series_order(double lambda, double k_bound, double t) {
  return std::max(50, static_cast<int>(std::ceil(3.0 * lambda * k_bound * t)));
}

/// e^{-t} sum_{n>N} a^n / n! with a = lambda K t.
inline double poisson_tail_bound(double lambda, double k_bound, double t, int order) {
  const double a = lambda * k_bound * t;
  if (a <= 0.0) return 0.0;
  return std::exp(a - t) * boost::math::gamma_p(static_cast<double>(order) + 1.0, a);
}

/// mu^(n)(x0, x) for n = 0..order, by repeated sparse application.  Only
/// vertices within forward distance `order` of x0 are touched.
inline std::vector<double> kernel_power_entries(const GraphPtr& g, const VertexId& x0, const VertexId& x,
                                                int order, std::size_t vertex_budget = 2'000'000) {
  Atlas atlas(g, vertex_budget);
  const auto src = atlas.intern(x0);
  g->require_vertex(x);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(order) + 1);
  std::vector<double> cur(atlas.size(), 0.0), next;
  std::vector<std::uint32_t> support{src}, next_support;
  cur[src] = 1.0;
  for (int n = 0;; ++n) {
    auto xi = atlas.find(x);
    out.push_back(xi && *xi < cur.size() ? cur[*xi] : 0.0);
    if (n == order) break;
    next.assign(cur.size(), 0.0);
    next_support.clear();
    for (auto u : support) {
      const double mass = cur[u];
      for (const auto& a : atlas.arcs(u)) {
        if (a.to >= next.size()) next.resize(atlas.size(), 0.0);
        if (next[a.to] == 0.0) next_support.push_back(a.to);
        next[a.to] += mass * a.weight;
      }
    }
    std::sort(next_support.begin(), next_support.end());
    next_support.erase(std::unique(next_support.begin(), next_support.end()), next_support.end());
    std::swap(cur, next);
    std::swap(support, next_support);
  }
  return out;
}

/// E^{delta_x0}(eta_t(x)) = e^{-t} sum_n mu^(n)(x0, x) (lambda t)^n / n!,
/// truncated at `order` (negative: default order).
inline OccupancySeries expected_count(const GraphPtr& g, const VertexId& x0, const VertexId& x, double lambda,
                                      double t, int order = -1) {
  if (!(lambda >= 0.0)) throw SpectralError("lambda must be nonnegative");
  if (!(t >= 0.0)) throw SpectralError("time must be nonnegative");
  const double k_bound = g->weight_bound();
  if (order < 0) order = default_series_order(lambda, k_bound, t);
  OccupancySeries s{x0, x, lambda, t, order, 0.0, 0.0};
  const auto powers = kernel_power_entries(g, x0, x, order);
  const double log_lt = lambda * t > 0.0 ? std::log(lambda * t) : -std::numeric_limits<double>::infinity();
  for (int n = 0; n <= order; ++n) {
    const double p = powers[static_cast<std::size_t>(n)];
    if (p == 0.0) continue;
    const double log_coeff = (n == 0 ? 0.0 : n * log_lt) - std::lgamma(n + 1.0) - t;
    s.value += p * std::exp(log_coeff);
  }
  s.tail_bound = poisson_tail_bound(lambda, k_bound, t, order);
  return s;
}

inline void write_occupancy_csv(std::ostream& os, const std::vector<OccupancySeries>& rows) {
  csv_row(os, "t", "value", "tail_bound");
  for (const auto& r : rows) csv_row(os, r.t, r.value, r.tail_bound);
}

/// RK4 for dE/dt = -E + lambda M^T E from E(0) = delta_{x0}.  The step is
/// shrunk so that it divides t exactly.
inline std::vector<double> occupancy_ode_solve(const KernelMatrix& m, std::size_t x0, double lambda, double t,
                                               double step) {
  if (!(step > 0.0)) throw SpectralError("ODE step must be positive");
  if (x0 >= m.size()) throw SpectralError("start vertex outside the matrix");
  if (!(t >= 0.0)) throw SpectralError("time must be nonnegative");
  const std::size_t n = m.size();
  std::vector<double> e(n, 0.0), k1(n), k2(n), k3(n), k4(n), tmp(n), mt(n);
  e[x0] = 1.0;
  if (t == 0.0) return e;
  const auto steps = static_cast<std::size_t>(std::ceil(t / step - 1e-12));
  const double h = t / static_cast<double>(steps);
  auto rhs = [&](const std::vector<double>& y, std::vector<double>& out) {
    m.apply_transpose(y, mt);
    for (std::size_t i = 0; i < n; ++i) out[i] = -y[i] + lambda * mt[i];
  };
  for (std::size_t s = 0; s < steps; ++s) {
    rhs(e, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = e[i] + 0.5 * h * k1[i];
    rhs(tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = e[i] + 0.5 * h * k2[i];
    rhs(tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = e[i] + h * k3[i];
    rhs(tmp, k4);
    for (std::size_t i = 0; i < n; ++i) e[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return e;
}

enum class Growth { decaying, growing, inconclusive };

inline const char* to_string(Growth g) {
  switch (g) {
    case Growth::decaying: return "decaying";
    case Growth::growing: return "growing";
    default: return "inconclusive";
  }
}

/// Classifies t -> E(eta_t(x)) by successive ratios on `t_grid`: every ratio
/// below 0.9 is decaying, every ratio above 1.1 is growing.
inline Growth growth_classifier(const GraphPtr& g, const VertexId& x0, const VertexId& x, double lambda,
                                const std::vector<double>& t_grid) {
  if (t_grid.size() < 2) throw SpectralError("growth classification needs at least two times");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw SpectralError("time grid must be increasing");
  std::vector<double> values;
  for (double t : t_grid) values.push_back(expected_count(g, x0, x, lambda, t).value);
  bool down = true, up = true;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i - 1] <= 0.0) return Growth::inconclusive;
    const double ratio = values[i] / values[i - 1];
    down = down && ratio < 0.9;
    up = up && ratio > 1.1;
  }
  if (down) return Growth::decaying;
  if (up) return Growth::growing;
  return Growth::inconclusive;
}

/// (sum_y mu^(n)(x, y))^{-1/n} for n = 1..max_n.  A diagnostic for the weak
/// critical value on families where it is known to apply; not a certified
/// value of lambda_w.
inline std::vector<double> row_sum_ladder(const GraphPtr& g, const VertexId& x, int max_n,
                                          std::size_t vertex_budget = 2'000'000) {
  Atlas atlas(g, vertex_budget);
  std::unordered_map<std::uint32_t, double> cur{{atlas.intern(x), 1.0}};
  std::vector<double> out;
  for (int n = 1; n <= max_n; ++n) {
    std::unordered_map<std::uint32_t, double> next;
    for (const auto& [u, mass] : cur)
      for (const auto& a : atlas.arcs(u)) next[a.to] += mass * a.weight;
    double total = 0.0;
    for (const auto& [u, mass] : next) total += mass;
    out.push_back(total > 0.0 ? std::pow(total, -1.0 / n) : std::numeric_limits<double>::infinity());
    cur = std::move(next);
  }
  return out;
}

}  // namespace brwlab
