#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "pipeflow/errors.hpp"
#include "pipeflow/noise.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

/// Covariance coefficients of the log-scale linear system under red noise.
///   additive coupling:        gamma = s^2 p int_0^t K1(u) K2(u) du,  K(u) = (e^{-kappa u} - e^{-lambda u})/(lambda - kappa)
///   time-derivative coupling: gamma = s^2 p int_0^t H1(u) H2(u) du,  H(u) = (lambda e^{-lambda u} - kappa e^{-kappa u})/(lambda - kappa)
/// with s = sigma_R sigma_xi. Closed forms are used away from lambda = kappa; inside the guard band a 4-term
/// Taylor series in (lambda - kappa) is used instead.
enum class GammaKind { additive_red, strat_red };

inline std::string to_string(GammaKind k) { return k == GammaKind::additive_red ? "additive-red" : "strat-red"; }

struct RedNoiseParams {
  double kappa;
  double sigma_R;
  double sigma_xi;
};

struct GammaOptions {
  bool series_fallback = true;
  double guard = 1e-4;  // band |lambda - kappa| < guard (1 + kappa)
};

namespace detail {

/// (1 - e^{-a t}) / a, with value t at a = 0.
inline double expint_unit(double a, double t) {
  if (a == 0.0) return t;
  return -std::expm1(-a * t) / a;
}

/// int_0^t u^m e^{-c u} du for c >= 0.
inline double moment(unsigned m, double c, double t) {
  const double mp1 = static_cast<double>(m + 1);
  if (c == 0.0) return std::pow(t, mp1) / mp1;
  const double x = c * t;
  if (x < 1.0) {
    double term = std::pow(t, mp1);  // (-c)^j t^{m+j+1} / j!
    double sum = term / mp1;
    for (unsigned j = 1; j < 60; ++j) {
      term *= -x / static_cast<double>(j);
      const double add = term / (mp1 + j);
      sum += add;
      if (std::abs(add) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return boost::math::tgamma_lower(mp1, x) / std::pow(c, mp1);
}

inline constexpr unsigned kSeriesTerms = 4;

/// c_k = (-delta)^k / (k+1)!, k < kSeriesTerms.
inline std::vector<double> taylor_coeffs(double delta) {
  std::vector<double> c(kSeriesTerms);
  double pw = 1.0, fact = 1.0;
  for (unsigned k = 0; k < kSeriesTerms; ++k) {
    fact *= static_cast<double>(k + 1);
    c[k] = pw / fact;
    pw *= -delta;
  }
  return c;
}

inline double additive_closed(double l1, double l2, double k, double t) {
  const double num = expint_unit(2 * k, t) - expint_unit(k + l2, t) - expint_unit(k + l1, t) + expint_unit(l1 + l2, t);
  return num / ((l1 - k) * (l2 - k));
}

inline double strat_closed(double l1, double l2, double k, double t) {
  const double num = l1 * l2 * expint_unit(l1 + l2, t) - k * l1 * expint_unit(l1 + k, t) -
                     k * l2 * expint_unit(l2 + k, t) + k * k * expint_unit(2 * k, t);
  return num / ((l1 - k) * (l2 - k));
}

// K(u) = e^{-kappa u} u sum_k c_k u^k near lambda = kappa.
inline double additive_series_one(double l1, double l2, double k, double t) {
  // l1 near kappa, l2 away: int u^{j+1} e^{-kappa u} (e^{-kappa u} - e^{-l2 u}) / (l2 - kappa)
  const auto c = taylor_coeffs(l1 - k);
  double s = 0.0;
  for (unsigned j = 0; j < kSeriesTerms; ++j) s += c[j] * (moment(j + 1, 2 * k, t) - moment(j + 1, k + l2, t));
  return s / (l2 - k);
}

inline double additive_series_two(double l1, double l2, double k, double t) {
  const auto c1 = taylor_coeffs(l1 - k);
  const auto c2 = taylor_coeffs(l2 - k);
  double s = 0.0;
  for (unsigned a = 0; a < kSeriesTerms; ++a)
    for (unsigned b = 0; b < kSeriesTerms; ++b) s += c1[a] * c2[b] * moment(a + b + 2, 2 * k, t);
  return s;
}

// H(u) = e^{-kappa u} (1 - lambda u sum_k c_k u^k) near lambda = kappa.
inline double strat_series_one(double l1, double l2, double k, double t) {
  const auto c = taylor_coeffs(l1 - k);
  // int u^m e^{-kappa u} H2(u) du
  auto with_h2 = [&](unsigned m) { return (l2 * moment(m, k + l2, t) - k * moment(m, 2 * k, t)) / (l2 - k); };
  double s = with_h2(0);
  for (unsigned j = 0; j < kSeriesTerms; ++j) s -= l1 * c[j] * with_h2(j + 1);
  return s;
}

inline double strat_series_two(double l1, double l2, double k, double t) {
  const auto c1 = taylor_coeffs(l1 - k);
  const auto c2 = taylor_coeffs(l2 - k);
  double s = moment(0, 2 * k, t);
  for (unsigned a = 0; a < kSeriesTerms; ++a) {
    s -= l1 * c1[a] * moment(a + 1, 2 * k, t);
    s -= l2 * c2[a] * moment(a + 1, 2 * k, t);
  }
  for (unsigned a = 0; a < kSeriesTerms; ++a)
    for (unsigned b = 0; b < kSeriesTerms; ++b) s += l1 * l2 * c1[a] * c2[b] * moment(a + b + 2, 2 * k, t);
  return s;
}

}  // namespace detail

/// int_0^t K1 K2 du (additive) or int_0^t H1 H2 du (time-derivative) for eigenvalues l1, l2.
inline double gamma_kernel_integral(GammaKind kind, double l1, double l2, double t, double kappa,
                                    const GammaOptions& opt = {}) {
  if (!(kappa > 0.0)) throw domain_error("gamma: kappa must be positive");
  if (t < 0.0) throw domain_error("gamma: t must be >= 0");
  if (t == 0.0) return 0.0;
  const double band = opt.guard * (1.0 + kappa);
  const bool near1 = std::abs(l1 - kappa) < band;
  const bool near2 = std::abs(l2 - kappa) < band;
  if ((near1 || near2) && !opt.series_fallback)
    throw numeric_guard_error("gamma: kappa lies within the singular band of an eigenvalue");
  const bool additive = kind == GammaKind::additive_red;
  if (near1 && near2)
    return additive ? detail::additive_series_two(l1, l2, kappa, t) : detail::strat_series_two(l1, l2, kappa, t);
  if (near1)
    return additive ? detail::additive_series_one(l1, l2, kappa, t) : detail::strat_series_one(l1, l2, kappa, t);
  if (near2)
    return additive ? detail::additive_series_one(l2, l1, kappa, t) : detail::strat_series_one(l2, l1, kappa, t);
  return additive ? detail::additive_closed(l1, l2, kappa, t) : detail::strat_closed(l1, l2, kappa, t);
}

inline double gamma_additive_red(std::size_t n1, std::size_t n2, double t, const RedNoiseParams& rp, double p,
                                 double length, const GammaOptions& opt = {}) {
  const double s = rp.sigma_R * rp.sigma_xi;
  return s * s * p *
         gamma_kernel_integral(GammaKind::additive_red, eigenvalue(n1, length), eigenvalue(n2, length), t, rp.kappa, opt);
}

inline double gamma_strat_red(std::size_t n1, std::size_t n2, double t, const RedNoiseParams& rp, double p,
                              double length, const GammaOptions& opt = {}) {
  const double s = rp.sigma_R * rp.sigma_xi;
  return s * s * p *
         gamma_kernel_integral(GammaKind::strat_red, eigenvalue(n1, length), eigenvalue(n2, length), t, rp.kappa, opt);
}

/// s^2 p (t - 2(1 - e^{-kappa t})/kappa + (1 - e^{-2 kappa t})/(2 kappa)) / kappa^2.
inline double gamma00_additive(double t, const RedNoiseParams& rp, double p00, const GammaOptions& opt = {}) {
  const double s = rp.sigma_R * rp.sigma_xi;
  return s * s * p00 * gamma_kernel_integral(GammaKind::additive_red, 0.0, 0.0, t, rp.kappa, opt);
}

/// s^2 p (1 - e^{-2 kappa t})/(2 kappa).
inline double gamma00_strat(double t, const RedNoiseParams& rp, double p00, const GammaOptions& opt = {}) {
  const double s = rp.sigma_R * rp.sigma_xi;
  return s * s * p00 * gamma_kernel_integral(GammaKind::strat_red, 0.0, 0.0, t, rp.kappa, opt);
}

/// gamma_{n1,n2} for n1, n2 <= n_max at fixed t.
struct GammaTable {
  GammaKind kind;
  double t;
  RedNoiseParams params;
  std::size_t n_max;
  std::vector<double> p;      // row-major (n_max+1)^2
  std::vector<double> gamma;  // row-major (n_max+1)^2

  double operator()(std::size_t n1, std::size_t n2) const { return gamma[n1 * (n_max + 1) + n2]; }
  double covariance(std::size_t n1, std::size_t n2) const { return p[n1 * (n_max + 1) + n2]; }

  static GammaTable build(GammaKind kind, double t, const RedNoiseParams& rp, const NoiseSpec& spec, double length,
                          std::size_t n_max, const GammaOptions& opt = {}) {
    GammaTable tab{kind, t, rp, n_max, std::vector<double>((n_max + 1) * (n_max + 1), 0.0),
                   std::vector<double>((n_max + 1) * (n_max + 1), 0.0)};
    const double s2 = rp.sigma_R * rp.sigma_xi * rp.sigma_R * rp.sigma_xi;
    for (std::size_t a = 0; a <= n_max; ++a)
      for (std::size_t b = 0; b <= n_max; ++b) {
        const double pv = spec.covariance(a, b);
        tab.p[a * (n_max + 1) + b] = pv;
        if (pv == 0.0) continue;
        tab.gamma[a * (n_max + 1) + b] =
            s2 * pv * gamma_kernel_integral(kind, eigenvalue(a, length), eigenvalue(b, length), t, rp.kappa, opt);
      }
    return tab;
  }

  /// sum a_{n1} a_{n2} gamma_{n1,n2}.
  double quadratic_form(const std::vector<double>& a) const {
    double s = 0.0;
    for (std::size_t i = 0; i <= n_max && i < a.size(); ++i)
      for (std::size_t j = 0; j <= n_max && j < a.size(); ++j) s += a[i] * a[j] * (*this)(i, j);
    return s;
  }
};

}  // namespace pipeflow
