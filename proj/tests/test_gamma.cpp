#include <gtest/gtest.h>

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "pipeflow/gamma.hpp"
#include "pipeflow/validation.hpp"

using namespace pipeflow;

namespace {

const double kL = 10.0;

/// Fully expanded closed forms, term by term, for (n1, n2) != (0, 0) and kappa off the spectrum.
double expanded_additive(double l1, double l2, double k, double t, double s2p) {
  const double pre = s2p / (l1 + l2);
  return pre * ((l1 + l2 + 2 * k) / (2 * k * (l1 + k) * (l2 + k)) - std::exp(-t * (l1 + l2)) / ((l1 - k) * (l2 - k)) +
                std::exp(-t * (l1 + k)) * (l1 + l2) / ((l1 * l1 - k * k) * (l2 - k)) +
                std::exp(-t * (l2 + k)) * (l1 + l2) / ((l1 - k) * (l2 * l2 - k * k)) -
                std::exp(-2 * t * k) * (l1 + l2) / (2 * k * (l1 - k) * (l2 - k)));
}

double expanded_strat(double l1, double l2, double k, double t, double s2p) {
  const double pre = s2p / (l1 + l2);
  return pre * ((2 * l1 * l2 + (l1 + l2) * k) / (2 * (l1 + k) * (l2 + k)) -
                std::exp(-t * (l1 + l2)) * l1 * l2 / ((l1 - k) * (l2 - k)) +
                std::exp(-t * (l1 + k)) * k * l1 * (l1 + l2) / ((l1 * l1 - k * k) * (l2 - k)) +
                std::exp(-t * (l2 + k)) * k * l2 * (l1 + l2) / ((l1 - k) * (l2 * l2 - k * k)) -
                std::exp(-2 * t * k) * k * (l1 + l2) / (2 * (l1 - k) * (l2 - k)));
}

const RedNoiseParams kRed{0.5, 1.5, 0.1};

}  // namespace

TEST(Gamma, MatchesPrintedAdditiveExpansion) {
  const double s2 = std::pow(kRed.sigma_R * kRed.sigma_xi, 2);
  for (double kappa : {0.05, 0.5, 2.0})
    for (double t : {0.5, 1.0, 10.0})
      for (std::size_t n1 = 0; n1 <= 4; ++n1)
        for (std::size_t n2 = 0; n2 <= 4; ++n2) {
          if (n1 == 0 && n2 == 0) continue;
          const RedNoiseParams rp{kappa, kRed.sigma_R, kRed.sigma_xi};
          const double got = gamma_additive_red(n1, n2, t, rp, 1.0, kL);
          const double want = expanded_additive(eigenvalue(n1, kL), eigenvalue(n2, kL), kappa, t, s2);
          EXPECT_NEAR(got / want, 1.0, 1e-9) << n1 << "," << n2 << " t=" << t << " kappa=" << kappa;
        }
}

TEST(Gamma, MatchesPrintedTimeDerivativeExpansion) {
  const double s2 = std::pow(kRed.sigma_R * kRed.sigma_xi, 2);
  for (double kappa : {0.05, 0.5, 2.0})
    for (double t : {0.5, 1.0, 10.0})
      for (std::size_t n1 = 0; n1 <= 4; ++n1)
        for (std::size_t n2 = 0; n2 <= 4; ++n2) {
          if (n1 == 0 && n2 == 0) continue;
          const RedNoiseParams rp{kappa, kRed.sigma_R, kRed.sigma_xi};
          const double got = gamma_strat_red(n1, n2, t, rp, 1.0, kL);
          const double want = expanded_strat(eigenvalue(n1, kL), eigenvalue(n2, kL), kappa, t, s2);
          EXPECT_NEAR(got / want, 1.0, 1e-9) << n1 << "," << n2 << " t=" << t << " kappa=" << kappa;
        }
}

TEST(Gamma, ZeroModeClosedForms) {
  const double s2 = std::pow(kRed.sigma_R * kRed.sigma_xi, 2), p = std::exp(-1.0), k = kRed.kappa;
  for (double t : {0.1, 1.0, 10.0}) {
    const double add = s2 * p / (k * k) * (t - 2 * (1 - std::exp(-t * k)) / k + (1 - std::exp(-2 * t * k)) / (2 * k));
    EXPECT_NEAR(gamma00_additive(t, kRed, p) / add, 1.0, 1e-10);
    EXPECT_NEAR(gamma00_strat(t, kRed, p) / (s2 * p * (1 - std::exp(-2 * t * k)) / (2 * k)), 1.0, 1e-12);
  }
}

TEST(Gamma, VanishesAtTimeZero) {
  for (std::size_t n1 = 0; n1 <= 3; ++n1)
    for (std::size_t n2 = 0; n2 <= 3; ++n2) {
      EXPECT_EQ(gamma_additive_red(n1, n2, 0.0, kRed, 1.0, kL), 0.0);
      EXPECT_EQ(gamma_strat_red(n1, n2, 0.0, kRed, 1.0, kL), 0.0);
    }
  EXPECT_THROW(gamma_additive_red(0, 0, -1.0, kRed, 1.0, kL), domain_error);
  EXPECT_THROW(gamma_strat_red(0, 0, 1.0, RedNoiseParams{0.0, 1.5, 0.1}, 1.0, kL), domain_error);
}

TEST(Gamma, SymmetricInModeIndices) {
  for (double t : {0.1, 1.0, 10.0})
    for (std::size_t n1 = 0; n1 <= 5; ++n1)
      for (std::size_t n2 = 0; n2 <= 5; ++n2) {
        EXPECT_NEAR(gamma_additive_red(n1, n2, t, kRed, 1.0, kL), gamma_additive_red(n2, n1, t, kRed, 1.0, kL),
                    1e-15 * std::abs(gamma_additive_red(n1, n2, t, kRed, 1.0, kL)));
        EXPECT_NEAR(gamma_strat_red(n1, n2, t, kRed, 1.0, kL), gamma_strat_red(n2, n1, t, kRed, 1.0, kL),
                    1e-15 * std::abs(gamma_strat_red(n1, n2, t, kRed, 1.0, kL)));
      }
}

TEST(Gamma, SmallKappaLimits) {
  const RedNoiseParams rp{1e-6, 1.5, 0.1};
  const double s2 = std::pow(rp.sigma_R * rp.sigma_xi, 2), p = std::exp(-1.0);
  for (double t : {0.1, 0.25, 0.5}) {
    EXPECT_NEAR(gamma00_additive(t, rp, p) / (s2 * p * t * t * t / 3.0), 1.0, 1e-6);
    EXPECT_NEAR(gamma00_strat(t, rp, p) / (s2 * p * t), 1.0, 1e-6);
  }
}

TEST(Gamma, SeriesFallbackIsContinuousAtAnEigenvalue) {
  const double l1 = eigenvalue(1, kL);
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red})
    for (std::size_t n2 : {0u, 1u, 2u}) {
      const double l2 = eigenvalue(n2, kL);
      const double at = gamma_kernel_integral(kind, l1, l2, 2.0, l1);
      const double lo = gamma_kernel_integral(kind, l1, l2, 2.0, l1 - 1e-4);
      const double hi = gamma_kernel_integral(kind, l1, l2, 2.0, l1 + 1e-4);
      EXPECT_TRUE(std::isfinite(at));
      EXPECT_NEAR(at, 0.5 * (lo + hi), 1e-7 * std::abs(at));
      EXPECT_NEAR(at, CovarianceOracle::gamma(kind, l1, l2, 2.0, RedNoiseParams{l1, 1.0, 1.0}, 1.0),
                  1e-9 * std::abs(at));
    }
  GammaOptions strict;
  strict.series_fallback = false;
  EXPECT_THROW(gamma_kernel_integral(GammaKind::additive_red, l1, 0.0, 1.0, l1, strict), numeric_guard_error);
}

TEST(Gamma, AgreesWithQuadratureOracle) {
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red})
    for (double kappa : {0.05, 0.5, 2.0})
      for (double t : {0.1, 1.0, 10.0})
        for (std::size_t n1 = 0; n1 <= 5; ++n1)
          for (std::size_t n2 = 0; n2 <= 5; ++n2) {
            const RedNoiseParams rp{kappa, 1.5, 0.1};
            const double oracle = CovarianceOracle::gamma(kind, eigenvalue(n1, kL), eigenvalue(n2, kL), t, rp, 1.0);
            EXPECT_NEAR(library_gamma(kind, n1, n2, t, rp, 1.0, kL) / oracle, 1.0, 1e-8);
          }
}

TEST(GammaTable, DiagonalSymmetricNonnegative) {
  const NoiseSpec spec = NoiseSpec::shifted_gaussian(100);
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red}) {
    const GammaTable tab = GammaTable::build(kind, 2.0, kRed, spec, kL, 8);
    for (std::size_t a = 0; a <= 8; ++a)
      for (std::size_t b = 0; b <= 8; ++b) {
        EXPECT_EQ(tab(a, b), tab(b, a));
        if (a != b) EXPECT_EQ(tab(a, b), 0.0);
        else EXPECT_GT(tab(a, a), 0.0);
      }
    std::vector<double> coeffs(9, 0.0);
    coeffs[0] = 2.0;
    coeffs[3] = -1.0;
    EXPECT_NEAR(tab.quadratic_form(coeffs), 4.0 * tab(0, 0) + tab(3, 3), 1e-18);
  }
}

TEST(CovarianceOracle, TriangularPropagatorMatchesMatrixExponential) {
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red})
    for (double lambda : {0.0, 0.5, 2.0})
      for (double s : {0.01, 1.0, 7.0}) {
        const Eigen::Matrix2d a = CovarianceOracle::generator(kind, lambda, kRed);
        const Eigen::Vector2d b = CovarianceOracle::loading(kind, kRed);
        const Eigen::Vector2d want = (s * a).exp() * b;
        const Eigen::Vector2d got = CovarianceOracle::propagate(a, s, b);
        EXPECT_NEAR(got(0), want(0), 1e-13);
        EXPECT_NEAR(got(1), want(1), 1e-13);
      }
}

TEST(CovarianceOracle, TimeDerivativeKernelMatchesResolventForm) {
  // e^{-s lambda} - kappa (e^{-s lambda} - e^{-s kappa}) / (kappa - lambda) per unit loading.
  for (double lambda : {0.0, 0.3, 2.5})
    for (double s : {0.1, 1.0, 4.0}) {
      const double k = kRed.kappa;
      const double kernel = std::exp(-s * lambda) - k * (std::exp(-s * lambda) - std::exp(-s * k)) / (k - lambda);
      const Eigen::Vector2d v = CovarianceOracle::propagate(CovarianceOracle::generator(GammaKind::strat_red, lambda, kRed), s,
                                                            CovarianceOracle::loading(GammaKind::strat_red, kRed));
      EXPECT_NEAR(v(0), kRed.sigma_R * kRed.sigma_xi * kernel, 1e-14);
    }
}

TEST(CovarianceOracle, FullBlockSolvesTheLyapunovEquation) {
  const double h = 1e-4, t = 1.3, p = 0.6;
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red}) {
    const double l1 = eigenvalue(1, kL), l2 = eigenvalue(2, kL);
    const Eigen::Matrix2d v = CovarianceOracle::block(kind, l1, l2, t, kRed, p);
    const Eigen::Matrix2d dv =
        (CovarianceOracle::block(kind, l1, l2, t + h, kRed, p) - CovarianceOracle::block(kind, l1, l2, t - h, kRed, p)) /
        (2 * h);
    const Eigen::Matrix2d a1 = CovarianceOracle::generator(kind, l1, kRed);
    const Eigen::Matrix2d a2 = CovarianceOracle::generator(kind, l2, kRed);
    const Eigen::Vector2d b = CovarianceOracle::loading(kind, kRed);
    const Eigen::Matrix2d rhs = a1 * v + v * a2.transpose() + p * b * b.transpose();
    EXPECT_LT((dv - rhs).cwiseAbs().maxCoeff(), 1e-8);
    // The OU corner is the exact OU variance; the (0,0) entry is gamma.
    EXPECT_NEAR(v(1, 1), p * kRed.sigma_xi * kRed.sigma_xi * -std::expm1(-2 * kRed.kappa * t) / (2 * kRed.kappa), 1e-14);
    EXPECT_NEAR(v(0, 0) / CovarianceOracle::gamma(kind, l1, l2, t, kRed, p), 1.0, 1e-12);
  }
}

TEST(CovarianceOracle, SameModeBlockIsPositiveSemidefinite) {
  for (auto kind : {GammaKind::additive_red, GammaKind::strat_red})
    for (double t : {0.1, 1.0, 10.0}) {
      const Eigen::Matrix2d v = CovarianceOracle::block(kind, eigenvalue(2, kL), eigenvalue(2, kL), t, kRed, 1.0);
      EXPECT_NEAR(v(0, 1), v(1, 0), 1e-15);
      EXPECT_GE(v.determinant(), -1e-18);
      EXPECT_GT(v(0, 0), 0.0);
    }
}
