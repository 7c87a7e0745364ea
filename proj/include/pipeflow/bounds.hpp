#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pipeflow/errors.hpp"
#include "pipeflow/gamma.hpp"
#include "pipeflow/noise.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

/// Standard normal CDF via the C library complementary error function.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// 1 - Phi(z), computed without cancellation for large z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

struct AuditRow {
  double t;
  double mean;
  double stdev;
  double phi_arg;
  double raw;
  double clipped;
};

struct BoundResult {
  double raw = 0.0;
  double clipped = 0.0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stdev = std::numeric_limits<double>::quiet_NaN();
  double phi_arg = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> t_opt;
  std::string provenance;
};

inline double clip_probability(double v) { return std::clamp(v, 0.0, 1.0); }

// ---------------------------------------------------------------------------------------------
// Optimisation over the time horizon

/// n log-uniform points on [t_min, T].
inline std::vector<double> log_time_grid(double t_min, double T, std::size_t n = 512) {
  if (!(t_min > 0.0) || !(T >= t_min)) throw domain_error("log_time_grid: need 0 < t_min <= T");
  if (n < 2 || T == t_min) return {T};
  std::vector<double> out(n);
  const double a = std::log(t_min), b = std::log(T);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  out.front() = t_min;
  out.back() = T;
  return out;
}

struct Extremum {
  double t;
  double value;
};

/// Maximises f on [t_min, T]: grid scan on a log-uniform grid, then golden-section refinement
/// around the best grid point.
template <class F>
Extremum maximize_over_time(F&& f, double t_min, double T, std::size_t n = 512) {
  const auto grid = log_time_grid(t_min, T, n);
  std::size_t best = 0;
  std::vector<double> vals(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    vals[i] = f(grid[i]);
    if (vals[i] > vals[best]) best = i;
  }
  Extremum ex{grid[best], vals[best]};
  if (grid.size() < 3) return ex;
  double lo = grid[best == 0 ? 0 : best - 1];
  double hi = grid[std::min(best + 1, grid.size() - 1)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo), d = lo + inv_phi * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * (1.0 + hi); ++it) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = f(d);
    }
  }
  if (fc > ex.value) ex = {c, fc};
  if (fd > ex.value) ex = {d, fd};
  return ex;
}

// ---------------------------------------------------------------------------------------------
// Martingale (gambler's ruin) bounds under Itô white noise

struct ItoBoundQuery {
  double J0;
  double J1;
  double J2;
  double alpha = 1.0;
  double T = 10.0;
  double L = 10.0;
  double sigma_I = 0.5;
  double zeta0 = 1.0;

  /// J0 > 0, J0 <= J1 < J2, alpha >= 0, T > 0.
  void validate() const {
    if (!(J0 > 0.0)) throw usage_error("ItoBoundQuery: J0 must be positive");
    if (!(J1 >= J0)) throw usage_error("ItoBoundQuery: need J0 <= J1");
    if (!(J2 > J1)) throw usage_error("ItoBoundQuery: need J1 < J2");
    if (!(alpha >= 0.0)) throw usage_error("ItoBoundQuery: alpha must be >= 0");
    if (!(T > 0.0)) throw usage_error("ItoBoundQuery: T must be positive");
    if (!(L > 0.0)) throw usage_error("ItoBoundQuery: L must be positive");
  }
};

inline double gambler_ruin_at(const ItoBoundQuery& q, double t) {
  return (q.J1 - q.J0) / (q.J2 * std::exp(t * q.alpha) - q.J0);
}

/// Probability that M reaches L J2 before L J0: (J1 - J0)/(J2 e^{T alpha} - J0).
inline double gambler_ruin(const ItoBoundQuery& q) {
  q.validate();
  return gambler_ruin_at(q, q.T);
}

/// Restrained expression at horizon t (may be negative).
inline double ito_restrained_value(const ItoBoundQuery& q, double t) {
  if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
  const double penalty = (q.J2 * std::exp(t * q.alpha) / q.J0 - q.J1 / q.J0) * q.L / (std::sqrt(q.zeta0) * q.sigma_I) / std::sqrt(t);
  return gambler_ruin_at(q, t) - penalty;
}

inline BoundResult ito_restrained_bound(const ItoBoundQuery& q) {
  q.validate();
  if (!(q.zeta0 > 0.0) || !(q.sigma_I > 0.0)) throw usage_error("ito_restrained_bound: needs zeta0 > 0 and sigma_I > 0");
  BoundResult b;
  b.raw = ito_restrained_value(q, q.T);
  b.clipped = clip_probability(b.raw);
  b.t_opt = q.T;
  b.provenance = "ito-restrained-gambler-ruin";
  return b;
}

/// sup over t in [t_min, T] of the restrained expression; argmax reported in t_opt.
inline BoundResult ito_sup_bound(const ItoBoundQuery& q, double t_min = 1e-3) {
  q.validate();
  if (!(q.zeta0 > 0.0) || !(q.sigma_I > 0.0)) throw usage_error("ito_sup_bound: needs zeta0 > 0 and sigma_I > 0");
  const double lo = std::min(t_min, q.T);
  const Extremum ex = maximize_over_time([&](double t) { return ito_restrained_value(q, t); }, lo, q.T);
  BoundResult b;
  b.raw = ex.value;
  b.clipped = clip_probability(ex.value);
  b.t_opt = ex.t;
  b.provenance = "ito-sup-norm-gambler-ruin";
  return b;
}

// ---------------------------------------------------------------------------------------------
// Gaussian bounds from the log-scale linear system

/// ||f||_1 log(J' / ||f||_1).
inline double threshold_from_level(double J_prime, double f_l1) {
  if (!(J_prime > 0.0) || !(f_l1 > 0.0)) throw domain_error("threshold_from_level: needs J' > 0 and ||f||_1 > 0");
  return f_l1 * std::log(J_prime / f_l1);
}

/// ||f||_1 exp(J'' / ||f||_1).
inline double level_from_threshold(double J_double_prime, double f_l1) {
  if (!(f_l1 > 0.0)) throw domain_error("level_from_threshold: needs ||f||_1 > 0");
  return f_l1 * std::exp(J_double_prime / f_l1);
}

/// 1 - Phi((threshold - mean)/stdev); a zero variance gives the step value.
inline BoundResult gaussian_tail_bound(double threshold, double mean, double variance, std::string provenance) {
  BoundResult b;
  b.mean = mean;
  b.stdev = std::sqrt(std::max(0.0, variance));
  b.provenance = std::move(provenance);
  if (b.stdev == 0.0) {
    b.phi_arg = threshold > mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    b.raw = threshold > mean ? 0.0 : 1.0;
  } else {
    b.phi_arg = (threshold - mean) / b.stdev;
    b.raw = normal_sf(b.phi_arg);
  }
  b.clipped = clip_probability(b.raw);
  return b;
}

struct GaussBoundQuery {
  explicit GaussBoundQuery(const Grid& g)
      : f(Field::constant(g, 1.0)), g(Field::constant(g, 1.0)), q0(Field::constant(g, 0.5)) {}

  Field f;
  Field g;
  Field q0;
  double J_prime = 12.5;
  double T = 10.0;
  double t_min = 0.01;
  NoiseSpec spec = NoiseSpec::shifted_gaussian(100);
  std::size_t n_max = 64;
  double sigma_S = 0.5;
  RedNoiseParams red{0.5, 1.5, 0.1};

  void validate() const {
    if (!(f.grid == g.grid) || !(f.grid == q0.grid)) throw usage_error("GaussBoundQuery: fields on different grids");
    for (double v : f.values)
      if (v < 0.0) throw usage_error("GaussBoundQuery: f must be nonnegative");
    if (!(norm_1(f) > 0.0)) throw usage_error("GaussBoundQuery: f must not vanish");
    if (!(J_prime > 0.0)) throw usage_error("GaussBoundQuery: J' must be positive");
    if (!(T > 0.0) || !(t_min > 0.0) || t_min > T) throw usage_error("GaussBoundQuery: need 0 < t_min <= T");
    for (double v : q0.values)
      if (!(v > 0.0)) throw domain_error("GaussBoundQuery: q0 must be strictly positive for log-scale bounds");
    spec.require_zero_mode();
  }

  double threshold() const { return threshold_from_level(J_prime, norm_1(f)); }
};

struct MeanVariance {
  double mean;
  double variance;
  double variance_tail;  // bound on the neglected modes beyond N_max
};

/// Projections shared by every Gaussian bound at a fixed query.
struct LogScaleProjections {
  std::vector<double> a;        // <e_n, f>
  std::vector<double> g_n;      // <e_n, g>
  std::vector<double> logq_n;   // <e_n, log q0>
  std::vector<double> lambda;   // eigenvalues
  double f_l2_sq;
  double length;

  static LogScaleProjections make(const Field& f, const Field& g, const Field& q0, std::size_t n_max) {
    std::vector<double> lq(q0.size());
    for (std::size_t j = 0; j < q0.size(); ++j) {
      if (!(q0[j] > 0.0)) throw domain_error("log-scale bound: q0 must be strictly positive");
      lq[j] = std::log(q0[j]);
    }
    LogScaleProjections p;
    p.a = analyze(f, n_max).coeffs;
    p.g_n = analyze(g, n_max).coeffs;
    p.logq_n = analyze(Field(q0.grid, std::move(lq)), n_max).coeffs;
    p.lambda.resize(n_max + 1);
    for (std::size_t n = 0; n <= n_max; ++n) p.lambda[n] = eigenvalue(n, f.grid.length());
    p.f_l2_sq = inner(f, f);
    p.length = f.grid.length();
    return p;
  }

  /// <e^{t Lap} f, log q0> - a0 <e0,g> t - sum_{n>=1} a_n <e_n,g> (1 - e^{-t lambda_n}) / lambda_n.
  double mean(double t) const {
    double m = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) m += a[n] * std::exp(-t * lambda[n]) * logq_n[n];
    m -= a[0] * g_n[0] * t;
    for (std::size_t n = 1; n < a.size(); ++n) m -= a[n] * g_n[n] * (-std::expm1(-t * lambda[n])) / lambda[n];
    return m;
  }
};

inline MeanVariance strat_white_mean_var(const LogScaleProjections& pr, double t, double sigma_S, const NoiseSpec& spec) {
  if (t < 0.0) throw domain_error("strat_white_mean_var: t must be >= 0");
  const std::size_t n_max = pr.a.size() - 1;
  // Diagonal Q with b_i = e_i: only n1 = n2 = i survives.
  double var = 0.0;
  double captured = 0.0;
  for (std::size_t i = 0; i <= n_max; ++i) {
    captured += pr.a[i] * pr.a[i];
    const double zi = spec.intensity(i);
    if (zi == 0.0) continue;
    var += zi * pr.a[i] * pr.a[i] * detail::expint_unit(2.0 * pr.lambda[i], t);
  }
  double zmax = 0.0;
  for (std::size_t i = n_max + 1; i <= spec.m; ++i) zmax = std::max(zmax, spec.intensity(i));
  const double lam_next = eigenvalue(n_max + 1, pr.length);
  const double tail = sigma_S * sigma_S * zmax * std::max(0.0, pr.f_l2_sq - captured) / (2.0 * lam_next);
  return {pr.mean(t), sigma_S * sigma_S * var, tail};
}

inline MeanVariance strat_white_mean_var(const Field& f, const Field& g, const Field& q0, double t, double sigma_S,
                                         const NoiseSpec& spec, std::size_t n_max) {
  return strat_white_mean_var(LogScaleProjections::make(f, g, q0, n_max), t, sigma_S, spec);
}

/// Stratonovich white noise, fixed t: P(J' <= <f, u(t)>) >= 1 - Phi((J'' - mean)/stdev).
inline BoundResult strat_white_bound_at(const GaussBoundQuery& q, double t) {
  q.validate();
  const auto pr = LogScaleProjections::make(q.f, q.g, q.q0, q.n_max);
  const auto mv = strat_white_mean_var(pr, t, q.sigma_S, q.spec);
  BoundResult b = gaussian_tail_bound(q.threshold(), mv.mean, mv.variance, "strat-white-fixed-time");
  b.t_opt = t;
  return b;
}

/// Evaluates a Gaussian bound family over t and keeps the best time.
template <class MeanVarAt>
BoundResult best_over_time(double threshold, MeanVarAt&& mv_at, double t_min, double T, std::string provenance,
                           std::vector<AuditRow>* audit) {
  auto arg = [&](double t) {
    const auto [m, v] = mv_at(t);
    if (v <= 0.0) return threshold > m ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    return -(threshold - m) / std::sqrt(v);
  };
  const Extremum ex = maximize_over_time(arg, t_min, T);
  const auto [m, v] = mv_at(ex.t);
  BoundResult b = gaussian_tail_bound(threshold, m, v, std::move(provenance));
  b.t_opt = ex.t;
  if (audit) {
    for (double t : log_time_grid(t_min, T)) {
      const auto [mt, vt] = mv_at(t);
      const BoundResult r = gaussian_tail_bound(threshold, mt, vt, "");
      audit->push_back({t, mt, r.stdev, r.phi_arg, r.raw, r.clipped});
    }
  }
  return b;
}

/// Stratonovich white noise, min of Phi over t in [t_min, T].
inline BoundResult strat_white_min_bound(const GaussBoundQuery& q, std::vector<AuditRow>* audit = nullptr) {
  q.validate();
  const auto pr = LogScaleProjections::make(q.f, q.g, q.q0, q.n_max);
  auto mv = [&](double t) {
    const auto r = strat_white_mean_var(pr, t, q.sigma_S, q.spec);
    return std::pair{r.mean, r.variance};
  };
  return best_over_time(q.threshold(), mv, q.t_min, q.T, "strat-white-min-time", audit);
}

/// L^{-1} int log q0.
inline double mean_log(const Field& q0) {
  std::vector<double> lq(q0.size());
  for (std::size_t j = 0; j < q0.size(); ++j) {
    if (!(q0[j] > 0.0)) throw domain_error("mean_log: q0 must be strictly positive");
    lq[j] = std::log(q0[j]);
  }
  return integral(Field(q0.grid, std::move(lq))) / q0.grid.length();
}

/// sum_i zeta_i <e_0, b_i>^2.
inline double zero_mode_intensity(const NoiseSpec& spec) {
  double s = 0.0;
  for (std::size_t i = 0; i <= spec.m; ++i) s += spec.intensity(i) * NoiseSpec::projection(0, i) * NoiseSpec::projection(0, i);
  return s;
}

/// Sup-norm form under Stratonovich white noise (f = g = 1, J' = L J):
/// argument sqrt(L)/(sigma_S sqrt(zeta_00)) (t^{-1/2}(log J - m) + t^{1/2}).
inline double strat_white_sup_argument(double t, double J, double mean_log_q0, double L, double sigma_S, double zeta00) {
  return std::sqrt(L) / (sigma_S * std::sqrt(zeta00)) * ((std::log(J) - mean_log_q0) / std::sqrt(t) + std::sqrt(t));
}

struct SupNormQuery {
  double J = 1.25;
  double L = 10.0;
  double T = 10.0;
  double t_min = 0.01;
  double mean_log_q0 = std::log(0.5);
  double zeta00 = std::exp(-1.0);

  void validate() const {
    if (!(J > 0.0 && J < 2.0)) throw usage_error("SupNormQuery: need 0 < J < 2");
    if (!(L > 0.0) || !(T > 0.0) || !(t_min > 0.0) || t_min > T) throw usage_error("SupNormQuery: bad horizon");
    if (!(zeta00 > 0.0)) throw usage_error("SupNormQuery: zero mode must be forced");
  }
};

inline BoundResult strat_white_sup_bound(const SupNormQuery& q, double sigma_S, std::vector<AuditRow>* audit = nullptr) {
  q.validate();
  const double threshold = q.L * std::log(q.J);
  auto mv = [&](double t) {
    return std::pair{q.L * q.mean_log_q0 - q.L * t, sigma_S * sigma_S * q.zeta00 * q.L * t};
  };
  return best_over_time(threshold, mv, q.t_min, q.T, "strat-white-sup-norm", audit);
}

/// Minimiser of the sup-norm argument: log J - m (clamped to the horizon).
inline double optimal_jump_time(double J, double mean_log_q0) { return std::log(J) - mean_log_q0; }

// ---------------------------------------------------------------------------------------------
// Red noise

inline double red_variance(const LogScaleProjections& pr, GammaKind kind, double t, const RedNoiseParams& rp,
                           const NoiseSpec& spec, double L) {
  if (t == 0.0) return 0.0;
  return GammaTable::build(kind, t, rp, spec, L, pr.a.size() - 1).quadratic_form(pr.a);
}

inline BoundResult red_bound_at(const GaussBoundQuery& q, GammaKind kind, double t) {
  q.validate();
  const auto pr = LogScaleProjections::make(q.f, q.g, q.q0, q.n_max);
  const double var = red_variance(pr, kind, t, q.red, q.spec, q.f.grid.length());
  BoundResult b = gaussian_tail_bound(q.threshold(), pr.mean(t), var, to_string(kind) + "-fixed-time");
  b.t_opt = t;
  return b;
}

inline BoundResult red_min_bound(const GaussBoundQuery& q, GammaKind kind, std::vector<AuditRow>* audit = nullptr) {
  q.validate();
  const auto pr = LogScaleProjections::make(q.f, q.g, q.q0, q.n_max);
  const double L = q.f.grid.length();
  auto mv = [&](double t) { return std::pair{pr.mean(t), red_variance(pr, kind, t, q.red, q.spec, L)}; };
  return best_over_time(q.threshold(), mv, q.t_min, q.T, to_string(kind) + "-min-time", audit);
}

/// Sup-norm form under red noise: argument sqrt(L)/sqrt(gamma_00) (log J - m + t).
inline BoundResult red_sup_bound(const SupNormQuery& q, GammaKind kind, const RedNoiseParams& rp,
                                 std::vector<AuditRow>* audit = nullptr) {
  q.validate();
  const double threshold = q.L * std::log(q.J);
  auto mv = [&](double t) {
    const double g00 = kind == GammaKind::additive_red ? gamma00_additive(t, rp, q.zeta00) : gamma00_strat(t, rp, q.zeta00);
    return std::pair{q.L * q.mean_log_q0 - q.L * t, q.L * g00};
  };
  return best_over_time(threshold, mv, q.t_min, q.T, to_string(kind) + "-sup-norm", audit);
}

/// t^{1/2} / (t - 2(1-e^{-t kappa})/kappa + (1-e^{-2 t kappa})/(2 kappa))^{1/2}.
inline double additive_red_time_factor(double t, double kappa) {
  return std::sqrt(t / (kappa * kappa * gamma_kernel_integral(GammaKind::additive_red, 0.0, 0.0, t, kappa)));
}

/// t^{1/2} / ((1-e^{-2 t kappa})/(2 kappa))^{1/2}.
inline double strat_red_time_factor(double t, double kappa) {
  return std::sqrt(t / detail::expint_unit(2.0 * kappa, t));
}

/// Heterogeneity shifted by the Itô-to-log drift (sigma_I^2/2) sum zeta_i b_i^2. This only moves the mean
/// of the log-scale process; no bound is claimed for Itô noise through this route.
inline Field ito_log_mean_shift(const Field& g, double sigma_I, const NoiseSpec& spec) {
  const Field c = intensity_profile(spec, g.grid);
  std::vector<double> out(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) out[j] = g[j] + 0.5 * sigma_I * sigma_I * c[j];
  return Field(g.grid, std::move(out));
}

}  // namespace pipeflow
