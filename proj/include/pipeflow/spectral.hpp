#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pipeflow/errors.hpp"

namespace pipeflow {

/// Uniform grid on [0, L] including both endpoints.
class Grid {
 public:
  Grid(double length, std::size_t n_points) : length_(length), n_points_(n_points) {
    if (!(length > 0.0) || !std::isfinite(length)) throw domain_error("Grid: length must be positive");
    if (n_points < 3) throw domain_error("Grid: need at least 3 points");
  }

  /// Grid with spacing dx; L/dx must be (close to) an integer.
  static Grid with_spacing(double length, double dx) {
    if (!(dx > 0.0)) throw domain_error("Grid: spacing must be positive");
    const double cells = length / dx;
    const double rounded = std::round(cells);
    if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells))
      throw usage_error("Grid: length is not a multiple of the spacing");
    return Grid(length, static_cast<std::size_t>(rounded) + 1);
  }

  double length() const { return length_; }
  std::size_t size() const { return n_points_; }
  double spacing() const { return length_ / static_cast<double>(n_points_ - 1); }
  double node(std::size_t j) const {
    return j + 1 == n_points_ ? length_ : spacing() * static_cast<double>(j);
  }
  std::vector<double> nodes() const {
    std::vector<double> x(n_points_);
    for (std::size_t j = 0; j < n_points_; ++j) x[j] = node(j);
    return x;
  }
  /// Composite trapezoid weights.
  std::vector<double> weights() const {
    std::vector<double> w(n_points_, spacing());
    w.front() *= 0.5;
    w.back() *= 0.5;
    return w;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  double length_;
  std::size_t n_points_;
};

/// Real values on the nodes of a grid.
struct Field {
  Field(Grid g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw usage_error("Field: value count does not match grid");
    for (double x : values)
      if (!std::isfinite(x)) throw domain_error("Field: non-finite value");
  }
  static Field constant(const Grid& g, double c) { return Field(g, std::vector<double>(g.size(), c)); }
  template <class F>
  static Field from_function(const Grid& g, F&& f) {
    std::vector<double> v(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) v[j] = f(g.node(j));
    return Field(g, std::move(v));
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t j) const { return values[j]; }

  Grid grid;
  std::vector<double> values;
};

/// a_n = <e_n, f> for n = 0..N_max.
struct SpectralCoeffs {
  std::vector<double> coeffs;
  std::size_t n_max() const { return coeffs.empty() ? 0 : coeffs.size() - 1; }
};

/// Neumann eigenvalue (n pi / L)^2.
inline double eigenvalue(std::size_t n, double length) {
  if (!(length > 0.0)) throw domain_error("eigenvalue: length must be positive");
  const double k = static_cast<double>(n) * std::numbers::pi / length;
  return k * k;
}

/// Normalized Neumann eigenfunction of the Laplacian on [0, L].
struct Eigenmode {
  std::size_t n;
  double length;
  double lambda;

  double operator()(double x) const {
    if (n == 0) return 1.0 / std::sqrt(length);
    return std::sqrt(2.0 / length) * std::cos(static_cast<double>(n) * std::numbers::pi * x / length);
  }
};

inline Eigenmode eigenpair(std::size_t n, double length) {
  return Eigenmode{n, length, eigenvalue(n, length)};
}

inline Field eigenfunction_field(const Grid& g, std::size_t n) {
  return Field::from_function(g, eigenpair(n, g.length()));
}

namespace detail {
inline void require_same_grid(const Field& a, const Field& b) {
  if (!(a.grid == b.grid)) throw usage_error("fields live on different grids");
}

/// Table of e_n(x_j), row-major by mode: rows n = 0..n_max, columns j.
inline std::vector<double> mode_table(const Grid& g, std::size_t n_max) {
  const std::size_t np = g.size();
  std::vector<double> table((n_max + 1) * np);
  const auto x = g.nodes();
  for (std::size_t n = 0; n <= n_max; ++n) {
    const Eigenmode e = eigenpair(n, g.length());
    for (std::size_t j = 0; j < np; ++j) table[n * np + j] = e(x[j]);
  }
  return table;
}
}  // namespace detail

inline double inner(const Field& f, const Field& h) {
  detail::require_same_grid(f, h);
  const auto w = f.grid.weights();
  double s = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) s += w[j] * f[j] * h[j];
  return s;
}

inline double norm_1(const Field& f) {
  const auto w = f.grid.weights();
  double s = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) s += w[j] * std::abs(f[j]);
  return s;
}

inline double norm_inf(const Field& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::abs(v));
  return m;
}

inline double norm_2(const Field& f) { return std::sqrt(inner(f, f)); }

/// Trapezoid integral of f over [0, L].
inline double integral(const Field& f) {
  const auto w = f.grid.weights();
  double s = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) s += w[j] * f[j];
  return s;
}

inline SpectralCoeffs analyze(const Field& f, std::size_t n_max) {
  const auto w = f.grid.weights();
  const auto table = detail::mode_table(f.grid, n_max);
  const std::size_t np = f.size();
  SpectralCoeffs c{std::vector<double>(n_max + 1, 0.0)};
  for (std::size_t n = 0; n <= n_max; ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < np; ++j) s += w[j] * table[n * np + j] * f[j];
    c.coeffs[n] = s;
  }
  return c;
}

inline Field synthesize(const SpectralCoeffs& c, const Grid& g) {
  const std::size_t np = g.size();
  const std::size_t n_max = c.n_max();
  const auto table = detail::mode_table(g, n_max);
  std::vector<double> v(np, 0.0);
  for (std::size_t n = 0; n < c.coeffs.size(); ++n)
    for (std::size_t j = 0; j < np; ++j) v[j] += c.coeffs[n] * table[n * np + j];
  return Field(g, std::move(v));
}

inline constexpr double kSeriesTailTolerance = 1e-14;

/// Smallest N with exp(-t lambda_N) below the tail tolerance, capped at `cap`.
inline std::size_t tail_truncation(double t, double length, std::size_t cap) {
  if (t < 0.0) throw domain_error("tail_truncation: negative time");
  if (t == 0.0) return cap;
  const double lambda_needed = -std::log(kSeriesTailTolerance) / t;
  const double n = std::ceil(std::sqrt(lambda_needed) * length / std::numbers::pi);
  // strict inequality at the boundary
  std::size_t out = static_cast<std::size_t>(std::max(0.0, n));
  if (std::exp(-t * eigenvalue(out, length)) >= kSeriesTailTolerance) ++out;
  return std::min(out, cap);
}

/// Default mode cap on a grid: 4 x n_points.
inline std::size_t semigroup_mode_cap(const Grid& g) { return 4 * g.size(); }

/// e^{-t alpha} sum_n e^{-t lambda_n} <e_n, f> e_n, truncated by the tail rule.
/// Accurate for t of order spacing^2 or larger; t = 0 returns f unchanged.
inline Field apply_semigroup(const Field& f, double t, double alpha) {
  if (t < 0.0 || !std::isfinite(t)) throw domain_error("apply_semigroup: t must be >= 0");
  if (t == 0.0) return f;
  const std::size_t n_max = tail_truncation(t, f.grid.length(), semigroup_mode_cap(f.grid));
  SpectralCoeffs c = analyze(f, n_max);
  const double damp = std::exp(-t * alpha);
  for (std::size_t n = 0; n <= n_max; ++n) c.coeffs[n] *= damp * std::exp(-t * eigenvalue(n, f.grid.length()));
  return synthesize(c, f.grid);
}

/// Fundamental solution of u_t = u_xx - alpha u with Neumann conditions on [0, L].
inline double heat_kernel(double x, double y, double t, double alpha, double length, std::size_t n_max) {
  if (!(t > 0.0)) throw domain_error("heat_kernel: t must be positive");
  double s = 0.0;
  for (std::size_t n = 0; n <= n_max; ++n) {
    const Eigenmode e = eigenpair(n, length);
    s += e(x) * e(y) * std::exp(-t * e.lambda);
  }
  return std::exp(-t * alpha) * s;
}

inline double heat_kernel(double x, double y, double t, double alpha, double length) {
  if (!(t > 0.0)) throw domain_error("heat_kernel: t must be positive");
  return heat_kernel(x, y, t, alpha, length, tail_truncation(t, length, 1'000'000));
}

/// Dense matrix form of apply_semigroup for a fixed (grid, t, alpha), for repeated stepping.
/// Row j holds w_k G_alpha(x_j, x_k, t); entries are nonnegative up to the series tail.
class SemigroupPropagator {
 public:
  SemigroupPropagator(const Grid& g, double t, double alpha)
      : grid_(g), n_(g.size()), matrix_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_))) {
    if (t < 0.0 || !std::isfinite(t)) throw domain_error("SemigroupPropagator: t must be >= 0");
    if (t == 0.0) {
      matrix_.setIdentity();
      find_band();
      return;
    }
    const std::size_t n_max = tail_truncation(t, g.length(), semigroup_mode_cap(g));
    const auto table = detail::mode_table(g, n_max);
    const auto w = g.weights();
    const double damp = std::exp(-t * alpha);
    const auto np = static_cast<Eigen::Index>(n_);
    Eigen::MatrixXd modes(np, static_cast<Eigen::Index>(n_max + 1));
    Eigen::VectorXd decay(static_cast<Eigen::Index>(n_max + 1));
    for (std::size_t n = 0; n <= n_max; ++n) {
      decay(static_cast<Eigen::Index>(n)) = damp * std::exp(-t * eigenvalue(n, g.length()));
      for (std::size_t j = 0; j < n_; ++j) modes(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) = table[n * n_ + j];
    }
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), np);
    matrix_ = modes * decay.asDiagonal() * modes.transpose() * wv.asDiagonal();
    find_band();
  }

  const Grid& grid() const { return grid_; }

  /// out = P in; `in` and `out` must not alias. Entries at the rounding-noise floor of the series
  /// (below kBandCut times the row maximum) outside the central band are skipped.
  void apply(std::span<const double> in, std::span<double> out) const {
    for (std::size_t j = 0; j < n_; ++j) {
      const double* row = rows_.data() + j * n_;
      std::size_t k = band_lo_[j];
      const std::size_t hi = band_hi_[j] + 1;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (; k + 4 <= hi; k += 4) {
        s0 += row[k] * in[k];
        s1 += row[k + 1] * in[k + 1];
        s2 += row[k + 2] * in[k + 2];
        s3 += row[k + 3] * in[k + 3];
      }
      for (; k < hi; ++k) s0 += row[k] * in[k];
      out[j] = (s0 + s1) + (s2 + s3);
    }
  }

  Field apply(const Field& f) const {
    if (!(f.grid == grid_)) throw usage_error("SemigroupPropagator: grid mismatch");
    std::vector<double> out(n_);
    apply(f.values, out);
    return Field(grid_, std::move(out));
  }

  double entry(std::size_t j, std::size_t k) const {
    return matrix_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }
  const Eigen::MatrixXd& matrix() const { return matrix_; }

 private:
  static constexpr double kBandCut = 1e-13;

  void find_band() {
    const auto np = static_cast<Eigen::Index>(n_);
    rows_ = matrix_;
    band_lo_.assign(n_, 0);
    band_hi_.assign(n_, n_ - 1);
    for (Eigen::Index j = 0; j < np; ++j) {
      const double cut = kBandCut * matrix_.row(j).cwiseAbs().maxCoeff();
      Eigen::Index lo = 0, hi = np - 1;
      while (lo < j && std::abs(matrix_(j, lo)) < cut) ++lo;
      while (hi > j && std::abs(matrix_(j, hi)) < cut) --hi;
      band_lo_[static_cast<std::size_t>(j)] = static_cast<std::size_t>(lo);
      band_hi_[static_cast<std::size_t>(j)] = static_cast<std::size_t>(hi);
    }
  }

  Grid grid_;
  std::size_t n_;
  Eigen::MatrixXd matrix_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows_;
  std::vector<std::size_t> band_lo_;
  std::vector<std::size_t> band_hi_;
};

}  // namespace pipeflow
