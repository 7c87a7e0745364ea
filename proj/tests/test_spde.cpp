#include <gtest/gtest.h>

#include <boost/numeric/odeint.hpp>
#include <cmath>

#include "pipeflow/spde.hpp"

using namespace pipeflow;

namespace {

ModelParams quiet_params(double q0) {
  ModelParams p;
  p.regime = NoiseRegime::ito(0.0);
  p.q0 = Field::constant(p.grid, q0);
  return p;
}

/// dq/dt = -q + (r+1) q^2 (2 - q) from q0 to t by an adaptive Dormand-Prince integrator.
double scalar_ode(double r, double q0, double t) {
  namespace ode = boost::numeric::odeint;
  double q = q0;
  auto rhs = [r](const double& x, double& dxdt, double) { dxdt = -x + (r + 1.0) * x * x * (2.0 - x); };
  ode::integrate_adaptive(ode::make_controlled<ode::runge_kutta_dopri5<double>>(1e-13, 1e-13), rhs, q, 0.0, t, 1e-3);
  return q;
}

double terminal_value(double q0, double dt) {
  ModelParams p = quiet_params(q0);
  p.dt = dt;
  RngStream rng(0, 0);
  return simulate_path(p, rng, 1000000, {}).snapshots.back()[0];
}

}  // namespace

TEST(SteadyStates, ReferenceReynoldsParameter) {
  const SteadyStates s = steady_states(1.0 / 15.0);
  EXPECT_NEAR(s.q_minus, 0.75, 1e-15);
  EXPECT_NEAR(s.q_plus, 1.25, 1e-15);
  EXPECT_EQ(s.saddle(), s.q_minus);
  EXPECT_EQ(s.laminar, 0.0);
}

TEST(SteadyStates, OtherReynoldsParameters) {
  const SteadyStates s = steady_states(3.0);
  EXPECT_NEAR(s.q_minus, 0.1339746, 1e-7);
  EXPECT_NEAR(s.q_plus, 1.8660254, 1e-7);
  const SteadyStates tiny = steady_states(1e-12);
  EXPECT_NEAR(tiny.q_minus, 1.0, 1e-5);
  EXPECT_NEAR(tiny.q_plus, 1.0, 1e-5);
  EXPECT_THROW(steady_states(0.0), domain_error);
  for (double r : {0.01, 0.5, 1.0, 10.0}) {
    const SteadyStates e = steady_states(r);
    EXPECT_LT(0.0, e.q_minus);
    EXPECT_LT(e.q_minus, 1.0);
    EXPECT_LT(1.0, e.q_plus);
    EXPECT_LT(e.q_plus, 2.0);
  }
}

TEST(StepNonlinear, TurbulentStateIsStable) {
  ModelParams p = quiet_params(1.25);
  RngStream rng(0, 0);
  const TrajectoryRecord rec = simulate_path(p, rng, 100, {});
  for (const auto& snap : rec.snapshots)
    for (double v : snap) EXPECT_NEAR(v, 1.25, 1e-6);
}

TEST(StepNonlinear, LaminarStateIsAbsorbing) {
  ModelParams p = quiet_params(0.0);
  p.regime = NoiseRegime::ito(0.5);
  RngStream rng(3, 0);
  const TrajectoryRecord rec = simulate_path(p, rng, 100, {});
  for (const auto& snap : rec.snapshots)
    for (double v : snap) EXPECT_EQ(v, 0.0);
}

TEST(StepNonlinear, BelowSaddleDecaysLikeTheScalarOde) {
  ModelParams p = quiet_params(0.5);
  RngStream rng(0, 0);
  const TrajectoryRecord rec = simulate_path(p, rng, 10, {});
  for (std::size_t k = 1; k < rec.norm_inf.size(); ++k) EXPECT_LT(rec.norm_inf[k], rec.norm_inf[k - 1]);
  for (std::size_t k = 0; k < rec.times.size(); k += 10) {
    const double oracle = scalar_ode(p.r, 0.5, rec.times[k]);
    EXPECT_NEAR(rec.norm_inf[k], oracle, 0.5 * p.dt) << "t=" << rec.times[k];  // first-order scheme
  }
}

TEST(StepNonlinear, FirstOrderInTheTimeStep) {
  const double oracle = scalar_ode(1.0 / 15.0, 0.7, 10.0);
  const double e1 = std::abs(terminal_value(0.7, 0.02) - oracle);
  const double e2 = std::abs(terminal_value(0.7, 0.01) - oracle);
  const double e3 = std::abs(terminal_value(0.7, 0.005) - oracle);
  EXPECT_NEAR(e1 / e2, 2.0, 0.3);
  EXPECT_NEAR(e2 / e3, 2.0, 0.3);
}

TEST(StepNonlinear, OverflowIsReportedWithItsTime) {
  ModelParams p = quiet_params(0.5);
  const Field huge = Field::constant(p.grid, 1e120);
  const Field zero = Field::constant(p.grid, 0.0);
  try {
    step_nonlinear(huge, p, zero, zero);
    FAIL() << "expected integration_failure";
  } catch (const integration_failure& e) {
    EXPECT_DOUBLE_EQ(e.time, p.dt);
  }
}

TEST(StepLinear, FirstModeDecay) {
  // The constant keeps the field positive, so the clamp at zero never acts.
  ModelParams p = quiet_params(0.5);
  const double alpha = 0.7;
  const Field e1 = eigenfunction_field(p.grid, 1);
  Field u = Field::from_function(p.grid, [&](double x) { return 1.0 + eigenpair(1, 10.0)(x); });
  const Field zero = Field::constant(p.grid, 0.0);
  for (int n = 0; n < 100; ++n) u = step_linear(u, alpha, p, zero, zero);
  const double c0 = std::exp(-alpha), c1 = std::exp(-(alpha + eigenvalue(1, 10.0)));
  for (std::size_t j = 0; j < p.grid.size(); ++j) EXPECT_NEAR(u[j], c0 + c1 * e1[j], 1e-6);
}

TEST(StepLinear, ConstantDecaysAtAlpha) {
  ModelParams p = quiet_params(0.5);
  Field u = Field::constant(p.grid, 0.3);
  const Field zero = Field::constant(p.grid, 0.0);
  for (int n = 0; n < 50; ++n) u = step_linear(u, 1.0, p, zero, zero);
  for (double v : u.values) EXPECT_NEAR(v, 0.3 * std::exp(-0.5), 1e-12);
}

TEST(StepLinear, ItoNoiseHasZeroMeanOnTheZeroMode) {
  ModelParams p;
  p.T = 1.0;
  p.regime = NoiseRegime::ito(0.5);
  const Field e0 = eigenfunction_field(p.grid, 0);
  const double expected = inner(e0, p.q0) * std::exp(-p.alpha * p.T);
  const std::size_t n = 10000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(21, i);
    const TrajectoryRecord rec = simulate_path(p, rng, 1000, {}, Equation::linear);
    const double v = inner(e0, Field(p.grid, rec.snapshots.back()));
    s += v;
    s2 += v * v;
  }
  const double mean = s / static_cast<double>(n);
  const double se = std::sqrt((s2 / static_cast<double>(n) - mean * mean) / static_cast<double>(n - 1));
  EXPECT_NEAR(mean, expected, 3.0 * se);
}

TEST(SimulatePath, ImmediateAndMissingPassage) {
  ModelParams p = quiet_params(0.5);
  RngStream rng(0, 0);
  const TrajectoryRecord rec = simulate_path(p, rng, 10, {0.4, 1.25});
  ASSERT_TRUE(rec.passage_time(0.4).has_value());
  EXPECT_EQ(*rec.passage_time(0.4), 0.0);
  EXPECT_FALSE(rec.passage_time(1.25).has_value());
  EXPECT_THROW(rec.passage_time(0.9), usage_error);
}

TEST(SimulatePath, PassageTimesNondecreasingAndFieldsNonnegative) {
  ModelParams p;
  p.regime = NoiseRegime::ito(1.5);
  const std::vector<double> levels{0.6, 0.8, 1.0, 1.25, 1.5};
  for (std::uint64_t i = 0; i < 20; ++i) {
    RngStream rng(99, i);
    const TrajectoryRecord rec = simulate_path(p, rng, 1, levels);
    double prev = 0.0;
    bool missing = false;
    for (double J : levels) {
      const auto tau = rec.passage_time(J);
      if (!tau) {
        missing = true;
        continue;
      }
      EXPECT_FALSE(missing) << "a higher level was crossed after a lower one was never crossed";
      EXPECT_GE(*tau, prev);
      prev = *tau;
    }
    for (const auto& snap : rec.snapshots)
      for (double v : snap) EXPECT_GE(v, 0.0);
  }
}

TEST(SimulatePath, SameStreamReproducesBitForBit) {
  ModelParams p;
  p.regime = NoiseRegime::strat_red(0.5, 0.5, 0.1);
  RngStream a(5, 1), b(5, 1);
  const TrajectoryRecord ra = simulate_path(p, a, 50, {1.25});
  const TrajectoryRecord rb = simulate_path(p, b, 50, {1.25});
  EXPECT_EQ(ra.snapshots, rb.snapshots);
  EXPECT_EQ(ra.xi_snapshots, rb.xi_snapshots);
}

TEST(CoupledCompare, DeterministicGapIsNonnegative) {
  ModelParams p = quiet_params(0.5);
  RngStream rng(0, 0);
  const CoupledResult c = coupled_compare(p, rng, 100);
  EXPECT_GE(c.min_gap, 0.0);
}

TEST(CoupledCompare, LaminarStartGivesZeroGap) {
  ModelParams p = quiet_params(0.0);
  p.regime = NoiseRegime::ito(0.5);
  RngStream rng(0, 0);
  const CoupledResult c = coupled_compare(p, rng, 100);
  EXPECT_EQ(c.min_gap, 0.0);
}

TEST(CoupledCompare, NonlinearDominatesLinearBeforeLevelTwo) {
  ModelParams p;
  p.regime = NoiseRegime::ito(0.5);
  for (std::uint64_t i = 0; i < 10; ++i) {
    RngStream rng(17, i);
    EXPECT_GE(coupled_compare(p, rng, 1000).min_gap, -1e-6);
  }
}

TEST(ObservableM, InitialValueAndDeterministicConstancy) {
  ModelParams p = quiet_params(0.5);
  RngStream rng(0, 0);
  const TrajectoryRecord rec = simulate_path(p, rng, 50, {}, Equation::linear);
  const auto m = observable_M(rec, p.alpha, p.T);
  EXPECT_NEAR(m.front(), std::exp(-10.0) * 5.0, 1e-15);
  // Only rounding and the 1e-13 band cut of the propagator move it.
  for (double v : m) EXPECT_NEAR(v / m.front(), 1.0, 1e-9);
}

TEST(ModelParams, RejectsNonPositiveStep) {
  ModelParams p;
  p.dt = 0.0;
  EXPECT_THROW(p.validate(), usage_error);
  p.dt = 0.03;
  EXPECT_THROW(p.validate(), usage_error);
}
