#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pipeflow/bounds.hpp"
#include "pipeflow/errors.hpp"
#include "pipeflow/experiment.hpp"
#include "pipeflow/gamma.hpp"
#include "pipeflow/parallel.hpp"
#include "pipeflow/rare_events.hpp"
#include "pipeflow/spde.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------------------------
// Covariance oracle for the log-scale red-noise systems.
//
// Per eigenmode the pair (w_n, xi_n) solves d(w, xi) = A_n (w, xi) dt + B dW with
//   additive:        A = [[-lambda, sigma_R], [0, -kappa]],          B = (0, sigma_xi)
//   time-derivative: A = [[-lambda, -sigma_R kappa], [0, -kappa]],   B = (sigma_R sigma_xi, sigma_xi)
// and the cross-covariance of modes n1, n2 at time t is p int_0^t e^{s A1} B B^T e^{s A2^T} ds.
// The (0,0) entry is gamma_{n1,n2}; the other entries are the blocks no bound uses.

struct CovarianceOracle {
  static Eigen::Matrix2d generator(GammaKind kind, double lambda, const RedNoiseParams& rp) {
    Eigen::Matrix2d a;
    const double coupling = kind == GammaKind::additive_red ? rp.sigma_R : -rp.sigma_R * rp.kappa;
    a << -lambda, coupling, 0.0, -rp.kappa;
    return a;
  }

  static Eigen::Vector2d loading(GammaKind kind, const RedNoiseParams& rp) {
    return {kind == GammaKind::additive_red ? 0.0 : rp.sigma_R * rp.sigma_xi, rp.sigma_xi};
  }

  /// exp(sA) b for an upper-triangular 2x2 A, with the off-diagonal divided difference
  /// (e^{s a11} - e^{s a22}) / (a11 - a22) evaluated through expm1 so equal diagonals are fine.
  static Eigen::Vector2d propagate(const Eigen::Matrix2d& a, double s, const Eigen::Vector2d& b) {
    const double e1 = std::exp(s * a(0, 0));
    const double e2 = std::exp(s * a(1, 1));
    const double d = a(0, 0) - a(1, 1);
    const double diff = d == 0.0 ? s * e2 : e2 * std::expm1(s * d) / d;
    return {e1 * b(0) + a(0, 1) * diff * b(1), e2 * b(1)};
  }

  /// Full 2x2 cross-covariance block: p * int_0^t e^{sA1} b b^T e^{sA2^T} ds by adaptive Gauss-Kronrod.
  static Eigen::Matrix2d block(GammaKind kind, double l1, double l2, double t, const RedNoiseParams& rp, double p) {
    const Eigen::Matrix2d a1 = generator(kind, l1, rp);
    const Eigen::Matrix2d a2 = generator(kind, l2, rp);
    const Eigen::Vector2d b = loading(kind, rp);
    Eigen::Matrix2d out;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        out(i, j) = p * integrate([&](double s) { return propagate(a1, s, b)(i) * propagate(a2, s, b)(j); }, t);
    return out;
  }

  /// gamma_{n1,n2} alone (the (0,0) entry).
  static double gamma(GammaKind kind, double l1, double l2, double t, const RedNoiseParams& rp, double p) {
    const Eigen::Matrix2d a1 = generator(kind, l1, rp);
    const Eigen::Matrix2d a2 = generator(kind, l2, rp);
    const Eigen::Vector2d b = loading(kind, rp);
    return p * integrate([&](double s) { return propagate(a1, s, b)(0) * propagate(a2, s, b)(0); }, t);
  }

  template <class F>
  static double integrate(F&& f, double t) {
    if (t == 0.0) return 0.0;
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, t, 15, 1e-12, &err);
  }
};

/// Closed-form gamma under test: (kind, n1, n2, t, params, p, L) -> gamma.
using GammaFormula =
    std::function<double(GammaKind, std::size_t, std::size_t, double, const RedNoiseParams&, double, double)>;

inline double library_gamma(GammaKind kind, std::size_t n1, std::size_t n2, double t, const RedNoiseParams& rp,
                            double p, double L) {
  return kind == GammaKind::additive_red ? gamma_additive_red(n1, n2, t, rp, p, L) : gamma_strat_red(n1, n2, t, rp, p, L);
}

namespace detail {

template <class Body>
CheckResult timed_check(std::string name, Body&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{std::move(name), false, "", 0.0};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

}  // namespace detail

/// Closed-form gamma against the quadrature oracle over (n1, n2) in {0..5}^2, t in {0.1, 1, 10},
/// kappa in {0.05, 0.5, 2}, both kinds, p = 1, L = 10; relative error below 1e-8.
inline CheckResult check_gamma_quadrature(const GammaFormula& formula = library_gamma, double tolerance = 1e-8) {
  return detail::timed_check("gamma-quadrature", [&](CheckResult& r) {
    const double L = 10.0;
    double worst = 0.0;
    std::string where;
    std::size_t cells = 0;
    for (GammaKind kind : {GammaKind::additive_red, GammaKind::strat_red})
      for (double kappa : {0.05, 0.5, 2.0})
        for (double t : {0.1, 1.0, 10.0})
          for (std::size_t n1 = 0; n1 <= 5; ++n1)
            for (std::size_t n2 = 0; n2 <= 5; ++n2) {
              const RedNoiseParams rp{kappa, 1.5, 0.1};
              const double oracle =
                  CovarianceOracle::gamma(kind, eigenvalue(n1, L), eigenvalue(n2, L), t, rp, 1.0);
              const double value = formula(kind, n1, n2, t, rp, 1.0, L);
              const double rel = std::abs(value - oracle) / std::abs(oracle);
              ++cells;
              if (!(rel <= worst)) {
                worst = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
                where = to_string(kind) + " n=(" + std::to_string(n1) + "," + std::to_string(n2) + ") t=" +
                        detail::fmt(t) + " kappa=" + detail::fmt(kappa);
              }
            }
    r.passed = worst < tolerance;
    r.detail = std::to_string(cells) + " cells, max rel err " + detail::fmt(worst, 3) + " at " + where +
               " (tol " + detail::fmt(tolerance, 2) + ")";
  });
}

/// gamma_00 at kappa = 1e-6 (series path) against s^2 p t^3/3 (additive) and s^2 p t (time-derivative).
inline CheckResult check_kappa_limits(double tolerance = 1e-6) {
  return detail::timed_check("kappa-zero-limits", [&](CheckResult& r) {
    const RedNoiseParams rp{1e-6, 1.5, 0.1};
    const double s2 = rp.sigma_R * rp.sigma_R * rp.sigma_xi * rp.sigma_xi;
    const double p00 = std::exp(-1.0);
    double worst_add = 0.0, worst_strat = 0.0;
    for (double t : {0.1, 0.25, 0.5}) {
      const double add = gamma00_additive(t, rp, p00);
      const double strat = gamma00_strat(t, rp, p00);
      worst_add = std::max(worst_add, std::abs(add / (s2 * p00 * t * t * t / 3.0) - 1.0));
      worst_strat = std::max(worst_strat, std::abs(strat / (s2 * p00 * t) - 1.0));
    }
    r.passed = worst_add < tolerance && worst_strat < tolerance;
    r.detail = "t in {0.1,0.25,0.5}: additive rel err " + detail::fmt(worst_add, 3) + ", time-derivative rel err " +
               detail::fmt(worst_strat, 3);
  });
}

/// Ensemble mean of M(t) = e^{-(T-t) alpha} ||u(t)||_1 for the linear Itô system stays at M(0).
inline CheckResult check_martingale(std::size_t n_paths, std::uint64_t seed, std::size_t workers) {
  return detail::timed_check("martingale", [&](CheckResult& r) {
    ModelParams p;
    p.regime = NoiseRegime::ito(0.5);
    const std::vector<double> times{2.5, 5.0, 10.0};
    const std::size_t stride = static_cast<std::size_t>(std::llround(2.5 / p.dt));
    std::vector<std::vector<double>> samples(times.size(), std::vector<double>(n_paths));
    double m0 = 0.0;
    parallel_for(n_paths, workers, [&](std::size_t i, std::size_t) {
      RngStream rng(seed, i);
      const TrajectoryRecord rec = simulate_path(p, rng, stride, {}, Equation::linear);
      const auto m = observable_M(rec, p.alpha, p.T);
      for (std::size_t k = 0; k < times.size(); ++k) samples[k][i] = m[k + 1];
      if (i == 0) m0 = m[0];
    });
    const double expected = std::exp(-10.0) * 5.0;
    r.passed = std::abs(m0 - expected) < 1e-12 * expected;
    std::ostringstream os;
    os << "M(0)=" << detail::fmt(m0, 8);
    for (std::size_t k = 0; k < times.size(); ++k) {
      double s = 0.0, s2 = 0.0;
      for (double v : samples[k]) {
        s += v;
        s2 += v * v;
      }
      const double n = static_cast<double>(n_paths);
      const double mean = s / n;
      const double se = std::sqrt(std::max(0.0, s2 / n - mean * mean) / (n - 1.0));
      const double z = (mean - expected) / se;
      r.passed = r.passed && std::abs(z) <= 3.0;
      os << "; t=" << times[k] << " mean=" << detail::fmt(mean, 8) << " z=" << detail::fmt(z, 3);
    }
    r.detail = os.str();
  });
}

/// q >= u_1 before q exceeds 2, u^S >= u^I, and tau_J(q) <= upsilon_J(u) + dt over seeded coupled runs.
inline CheckResult check_orderings(std::size_t runs, std::uint64_t seed, std::size_t workers, double tolerance = 1e-6) {
  return detail::timed_check("pathwise-orderings", [&](CheckResult& r) {
    ModelParams ito;
    ito.regime = NoiseRegime::ito(0.5);
    ModelParams strat = ito;
    strat.regime = NoiseRegime::strat(0.5);
    std::vector<double> gap_q(runs), gap_s(runs);
    std::vector<int> stop_bad(runs, 0);
    const double J = 1.25;
    parallel_for(runs, workers, [&](std::size_t i, std::size_t) {
      RngStream a(seed, 2 * i);
      const CoupledResult qu = coupled_compare(ito, a, 1);
      gap_q[i] = qu.min_gap;
      const auto tq = [&] {
        for (std::size_t k = 0; k < qu.first.times.size(); ++k)
          if (qu.first.norm_inf[k] > J) return qu.first.times[k];
        return std::numeric_limits<double>::infinity();
      }();
      const auto tu = [&] {
        for (std::size_t k = 0; k < qu.second.times.size(); ++k)
          if (qu.second.norm_inf[k] > J) return qu.second.times[k];
        return std::numeric_limits<double>::infinity();
      }();
      if (std::isfinite(tu) && !(tq <= tu + ito.dt)) stop_bad[i] = 1;
      RngStream b(seed, 2 * i + 1);
      const CoupledResult su = coupled_run(strat, Equation::linear, ito, Equation::linear, b, 1000,
                                           std::numeric_limits<double>::infinity());
      gap_s[i] = su.min_gap;
    });
    const double min_q = *std::min_element(gap_q.begin(), gap_q.end());
    const double min_s = *std::min_element(gap_s.begin(), gap_s.end());
    const int bad = std::accumulate(stop_bad.begin(), stop_bad.end(), 0);
    r.passed = min_q >= -tolerance && min_s >= -tolerance && bad == 0;
    r.detail = std::to_string(runs) + " runs: min(q - u1) = " + detail::fmt(min_q, 3) + ", min(uS - uI) = " +
               detail::fmt(min_s, 3) + ", stopping-time violations = " + std::to_string(bad);
  });
}

/// One row of the bound-domination table.
struct DominationRow {
  std::string preset;
  std::string bound;
  double raw;
  double clipped;
  double p_hat;
  double std_error;
  bool vacuous;
  bool passed;
};

/// Every selected bound of each preset against an MC estimate of P(sup_t ||q||_inf >= J by T).
inline CheckResult check_bound_domination(const std::vector<std::string>& presets, std::size_t n_paths,
                                          std::uint64_t seed, std::size_t workers,
                                          std::vector<DominationRow>* rows = nullptr) {
  return detail::timed_check("bound-domination", [&](CheckResult& r) {
    std::ostringstream os;
    r.passed = true;
    for (const auto& name : presets) {
      ExperimentConfig c = preset(name);
      c.score.forcing_lookahead = false;
      const SpdePathModel model = path_model(c);
      const McEstimate mc = mc_estimate(model, 1.0, n_paths, seed, workers);
      os << name << ": p_hat=" << detail::fmt(mc.p_hat, 4) << "+-" << detail::fmt(mc.std_error, 2);
      for (const auto& b : c.bounds.select) {
        const NamedBound nb = evaluate_bound(c, b);
        const bool vacuous = nb.result.raw < 0.0;
        const bool ok = vacuous ? nb.result.clipped == 0.0 : nb.result.clipped <= mc.p_hat + 3.0 * mc.std_error;
        r.passed = r.passed && ok;
        os << " " << b << "=" << detail::fmt(nb.result.clipped, 3) << (vacuous ? "(vacuous)" : "") << (ok ? "" : "!");
        if (rows)
          rows->push_back({name, b, nb.result.raw, nb.result.clipped, mc.p_hat, mc.std_error, vacuous, ok});
      }
      os << "; ";
    }
    r.detail = os.str();
  });
}

/// Mean of `runs` TAMS estimates on a scalar OU crossing problem against brute-force MC.
inline CheckResult check_tams_toy(std::size_t runs, std::size_t mc_paths, std::uint64_t seed, std::size_t workers) {
  return detail::timed_check("tams-toy", [&](CheckResult& r) {
    const ScalarOuModel model{1.0, 1.0, 0.0, 1.0, 0.01};
    const double level = 2.0;
    const McEstimate mc = mc_estimate(model, level, mc_paths, seed, workers);
    TamsConfig cfg;
    cfg.n_trajectories = 50;
    cfg.target = level;
    cfg.repetitions = runs;
    cfg.base_seed = seed ^ 0x5DEECE66DULL;
    cfg.workers = workers;
    const TamsSummary s = tams_repetitions(model, cfg);
    const double se = std::sqrt(mc.std_error * mc.std_error + s.std_error * s.std_error);
    const double z = (s.mean - mc.p_hat) / se;
    r.passed = std::abs(z) <= 3.0;
    r.detail = "MC " + detail::fmt(mc.p_hat, 5) + "+-" + detail::fmt(mc.std_error, 2) + " (" +
               std::to_string(mc_paths) + " paths), TAMS mean " + detail::fmt(s.mean, 5) + "+-" +
               detail::fmt(s.std_error, 2) + " (" + std::to_string(runs) + " runs), z=" + detail::fmt(z, 3);
  });
}

/// Minimiser of the sup-norm Stratonovich argument for q0 = 0.5, J = 1.25 against log 2.5.
inline CheckResult check_optimal_time(double tolerance = 1e-3) {
  return detail::timed_check("optimal-time", [&](CheckResult& r) {
    SupNormQuery q;
    q.J = 1.25;
    q.mean_log_q0 = std::log(0.5);
    q.t_min = 1e-3;
    const BoundResult b = strat_white_sup_bound(q, 0.5);
    const double expected = std::log(2.5);
    r.passed = b.t_opt && std::abs(*b.t_opt - expected) <= tolerance;
    r.detail = "t_opt=" + detail::fmt(b.t_opt.value_or(std::numeric_limits<double>::quiet_NaN()), 8) + " expected log 2.5=" + detail::fmt(expected, 8);
  });
}

/// Chapman-Kolmogorov for G_alpha on a 201-point grid and orthonormality of e_0..e_20 on 1001 points.
inline CheckResult check_spectral_identities() {
  return detail::timed_check("spectral-identities", [&](CheckResult& r) {
    const double L = 10.0, alpha = 1.0;
    const Grid g(L, 201);
    const auto w = g.weights();
    double worst_ck = 0.0;
    for (double t : {0.1, 0.5, 1.0})
      for (double s : {0.1, 0.5, 1.0}) {
        std::vector<std::vector<double>> kt(g.size(), std::vector<double>(g.size()));
        std::vector<std::vector<double>> ks = kt;
        for (std::size_t i = 0; i < g.size(); ++i)
          for (std::size_t j = 0; j < g.size(); ++j) {
            kt[i][j] = heat_kernel(g.node(i), g.node(j), t, alpha, L);
            ks[i][j] = heat_kernel(g.node(i), g.node(j), s, alpha, L);
          }
        for (std::size_t x = 0; x < g.size(); x += 10)
          for (std::size_t z = 0; z < g.size(); z += 10) {
            double acc = 0.0;
            for (std::size_t y = 0; y < g.size(); ++y) acc += w[y] * kt[x][y] * ks[y][z];
            worst_ck = std::max(worst_ck, std::abs(acc - heat_kernel(g.node(x), g.node(z), t + s, alpha, L)));
          }
      }
    const Grid fine(L, 1001);
    double worst_gram = 0.0;
    std::vector<Field> e;
    for (std::size_t n = 0; n <= 20; ++n) e.push_back(eigenfunction_field(fine, n));
    for (std::size_t a = 0; a <= 20; ++a)
      for (std::size_t b = 0; b <= 20; ++b)
        worst_gram = std::max(worst_gram, std::abs(inner(e[a], e[b]) - (a == b ? 1.0 : 0.0)));
    r.passed = worst_ck < 1e-8 && worst_gram < 1e-7;
    r.detail = "Chapman-Kolmogorov max err " + detail::fmt(worst_ck, 3) + " (tol 1e-8), Gram max err " +
               detail::fmt(worst_gram, 3) + " (tol 1e-7)";
  });
}

/// Outcome of one preset run through TAMS.
struct PresetRun {
  std::string preset;
  bool reached = false;
  std::size_t iterations = 0;
  double p_hat = 0.0;
  double log10_p = 0.0;
  double wall_time = 0.0;
  std::string error;
};

/// One TAMS run per preset (N = 50); passes when at least one final trajectory reaches the target score.
inline CheckResult check_presets_end_to_end(const std::vector<std::string>& presets, std::uint64_t seed,
                                            std::size_t workers, std::size_t max_iterations = 100000,
                                            std::vector<PresetRun>* runs = nullptr) {
  return detail::timed_check("preset-transitions", [&](CheckResult& r) {
    std::ostringstream os;
    r.passed = true;
    for (const auto& name : presets) {
      const ExperimentConfig c = preset(name);
      PresetRun pr;
      pr.preset = name;
      try {
        const SpdePathModel model = path_model(c);
        TamsConfig cfg;
        cfg.n_trajectories = c.tams.n_trajectories;
        cfg.kill_count = c.tams.kill_count;
        cfg.max_iterations = max_iterations;
        cfg.stagnation_limit = c.tams.stagnation_limit;
        cfg.base_seed = seed;
        cfg.workers = workers;
        const TamsEstimate e = tams_estimate(model, cfg);
        pr.reached = e.successes(1.0) > 0;
        pr.iterations = e.iterations;
        pr.p_hat = e.p_hat;
        pr.log10_p = e.log_p_hat / std::log(10.0);
        pr.wall_time = e.wall_time;
      } catch (const degeneracy_error& e) {
        pr.error = e.what();
      }
      r.passed = r.passed && pr.reached;
      os << name << ": " << (pr.reached ? "reached" : "not reached");
      if (pr.reached) os << " (" << pr.iterations << " iterations, log10 p=" << detail::fmt(pr.log10_p, 4) << ")";
      if (!pr.error.empty()) os << " [" << pr.error << "]";
      os << "; ";
      if (runs) runs->push_back(pr);
    }
    r.detail = os.str();
  });
}

/// Sizes for the full suite; the defaults are the acceptance sizes.
struct ValidationOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t martingale_paths = 10000;
  std::size_t ordering_runs = 200;
  std::size_t domination_paths = 10000;
  std::size_t tams_runs = 100;
  std::size_t toy_mc_paths = 1000000;
  std::vector<std::string> domination_presets{"fig1-ito-linf", "fig1-strat-linf", "fig2-addred-linf",
                                              "fig2-stratred-k005-linf", "fig2-stratred-k05-linf"};
  GammaFormula gamma = library_gamma;
};

/// gamma-vs-quadrature, kappa limits, martingale, orderings, bound domination, TAMS toy, optimal time and
/// spectral identities, in that order.
inline std::vector<CheckResult> run_validation_suite(const ValidationOptions& o) {
  std::vector<CheckResult> out;
  out.push_back(check_gamma_quadrature(o.gamma));
  out.push_back(check_kappa_limits());
  out.push_back(check_martingale(o.martingale_paths, o.seed, o.workers));
  out.push_back(check_orderings(o.ordering_runs, o.seed, o.workers));
  out.push_back(check_bound_domination(o.domination_presets, o.domination_paths, o.seed, o.workers));
  out.push_back(check_tams_toy(o.tams_runs, o.toy_mc_paths, o.seed, o.workers));
  out.push_back(check_optimal_time());
  out.push_back(check_spectral_identities());
  return out;
}

}  // namespace pipeflow
