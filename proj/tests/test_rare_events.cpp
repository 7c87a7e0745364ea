#include <gtest/gtest.h>

#include <cmath>

#include "pipeflow/rare_events.hpp"

using namespace pipeflow;

namespace {

ScalarOuModel toy_ou() {
  ScalarOuModel m;
  m.theta = 1.0;
  m.sigma = 1.0;
  m.x0 = 0.0;
  m.T = 1.0;
  m.dt = 0.01;
  return m;
}

TamsConfig small_config(std::size_t n, std::uint64_t seed) {
  TamsConfig c;
  c.n_trajectories = n;
  c.target = 2.0;
  c.base_seed = seed;
  c.repetitions = 20;
  return c;
}

}  // namespace

TEST(ScoreFunction, NormalizationPutsTurbulenceAtOne) {
  ModelParams p;
  const std::vector<double> w = p.grid.weights();
  const std::vector<double> turb(p.grid.size(), 1.25);
  EXPECT_NEAR(ScoreFunction::for_model(ScoreKind::sup_norm, p)(turb, w), 1.0, 1e-14);
  EXPECT_NEAR(ScoreFunction::for_model(ScoreKind::scaled_l1, p)(turb, w), 1.0, 1e-12);
  EXPECT_EQ(score_from_string("l1"), ScoreKind::scaled_l1);
  EXPECT_EQ(to_string(ScoreKind::sup_norm), "linf");
  EXPECT_THROW(score_from_string("l2"), usage_error);
}

TEST(MonteCarlo, TrivialLevels) {
  const ScalarOuModel m = toy_ou();
  const McEstimate all = mc_estimate(m, -1e9, 50, 1);
  EXPECT_EQ(all.p_hat, 1.0);
  EXPECT_EQ(all.std_error, 0.0);
  EXPECT_EQ(mc_estimate(m, 0.0, 10, 1).successes, 10u);
  EXPECT_EQ(mc_estimate(m, 1e9, 50, 1).p_hat, 0.0);
  EXPECT_THROW(mc_estimate(m, 1.0, 0, 1), usage_error);
}

TEST(MonteCarlo, HitsAreNestedAcrossLevels) {
  const ScalarOuModel m = toy_ou();
  std::size_t prev = 1000;
  for (double level : {0.5, 1.0, 1.5, 2.0}) {
    const McEstimate e = mc_estimate(m, level, 1000, 4);
    EXPECT_LE(e.successes, prev);
    prev = e.successes;
  }
}

TEST(MonteCarlo, WorkerCountDoesNotChangeTheResult) {
  const ScalarOuModel m = toy_ou();
  EXPECT_EQ(mc_estimate(m, 1.5, 2000, 9, 1).successes, mc_estimate(m, 1.5, 2000, 9, 3).successes);
}

TEST(Tams, AgreesWithMonteCarloOnScalarOu) {
  const ScalarOuModel m = toy_ou();
  const McEstimate mc = mc_estimate(m, 2.0, 200000, 77);
  ASSERT_GT(mc.successes, 50u);
  const TamsSummary s = tams_repetitions(m, small_config(100, 5));
  EXPECT_NEAR(s.mean, mc.p_hat, 3.0 * std::hypot(s.std_error, mc.std_error));
  for (const auto& run : s.runs) {
    EXPECT_FALSE(run.hit_iteration_cap);
    EXPECT_NEAR(run.p_hat, std::exp(run.log_p_hat), 1e-15);
  }
}

TEST(Tams, LevelsIncreaseAndWeightMatchesKills) {
  const TamsEstimate e = tams_estimate(toy_ou(), small_config(30, 2));
  ASSERT_FALSE(e.levels.empty());
  for (std::size_t i = 1; i < e.levels.size(); ++i) EXPECT_GE(e.levels[i], e.levels[i - 1]);
  double log_w = 0.0;
  for (std::size_t k : e.killed) log_w += std::log1p(-static_cast<double>(k) / 30.0);
  const double frac = static_cast<double>(e.successes(2.0)) / 30.0;
  EXPECT_NEAR(e.log_p_hat, log_w + std::log(frac), 1e-12);
  EXPECT_EQ(e.iterations, e.levels.size());
}

TEST(Tams, SameSeedReproducesAndWorkersDoNotMatter) {
  TamsConfig c = small_config(20, 11);
  const TamsEstimate a = tams_estimate(toy_ou(), c);
  c.workers = 3;
  const TamsEstimate b = tams_estimate(toy_ou(), c);
  EXPECT_EQ(a.p_hat, b.p_hat);
  EXPECT_EQ(a.levels, b.levels);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Tams, CloneSharesParentHistoryUpToBranch) {
  TamsConfig c = small_config(8, 3);
  c.max_iterations = 1;
  const TamsEstimate e = tams_estimate(toy_ou(), c);
  ASSERT_EQ(e.iterations, 1u);
  std::size_t clones = 0;
  for (const auto& tr : e.trajectories) {
    if (tr.parent < 0) continue;
    ++clones;
    const auto& parent = e.trajectories[static_cast<std::size_t>(tr.parent)];
    ASSERT_LT(parent.parent, 0) << "a parent must be an original survivor";
    ASSERT_GE(tr.branch_step, 1u);
    for (std::size_t n = 0; n < tr.branch_step; ++n) EXPECT_EQ(tr.normals[n], parent.normals[n]);
    for (std::size_t n = 0; n <= tr.branch_step; ++n) EXPECT_EQ(tr.score_history[n], parent.score_history[n]);
    EXPECT_GT(tr.score_history[tr.branch_step], e.levels[0]);
    EXPECT_GT(tr.max_score, e.levels[0]);
  }
  EXPECT_EQ(clones, e.killed[0]);
  EXPECT_TRUE(e.hit_iteration_cap);
}

TEST(Tams, StartingAboveTargetNeedsNoIterations) {
  ScalarOuModel m = toy_ou();
  m.x0 = 3.0;
  const TamsEstimate e = tams_estimate(m, small_config(10, 1));
  EXPECT_EQ(e.p_hat, 1.0);
  EXPECT_EQ(e.log_p_hat, 0.0);
  EXPECT_EQ(e.iterations, 0u);
}

TEST(Tams, TiedPopulationIsReportedAsDegenerate) {
  ScalarOuModel m = toy_ou();
  m.sigma = 0.0;
  EXPECT_THROW(tams_estimate(m, small_config(10, 1)), degeneracy_error);
}

TEST(Tams, RejectsBadConfiguration) {
  TamsConfig c = small_config(1, 1);
  EXPECT_THROW(tams_estimate(toy_ou(), c), usage_error);
  c = small_config(10, 1);
  c.kill_count = 10;
  EXPECT_THROW(tams_estimate(toy_ou(), c), usage_error);
}

TEST(SpdeTams, ReplayReproducesStoredScores) {
  ModelParams p;
  p.T = 2.0;
  p.regime = NoiseRegime::ito(0.5);
  const SpdePathModel model(p, ScoreFunction::for_model(ScoreKind::sup_norm, p));
  TamsConfig c;
  c.n_trajectories = 6;
  c.max_iterations = 5;
  c.base_seed = 4;
  const TamsEstimate e = tams_estimate(model, c);
  const auto w = p.grid.weights();
  for (const auto& tr : e.trajectories) {
    const TrajectoryRecord rec = replay_trajectory(model, tr, 50);
    EXPECT_EQ(model.score_function()(rec.snapshots.back(), w), tr.score_history.back());
    EXPECT_NEAR(rec.norm_inf[1] / 1.25, tr.score_history[50], 1e-14);
  }
}

TEST(SpdeTams, AdditiveRedHasADeterministicFirstStep) {
  ModelParams p;
  p.regime = NoiseRegime::additive_red(1.5, 0.5, 0.1);
  const SpdePathModel plain(p, ScoreFunction::for_model(ScoreKind::sup_norm, p));
  EXPECT_EQ(deterministic_steps(plain), 1u);
  EXPECT_FALSE(plain.forcing_lookahead());
  const SpdePathModel ahead(p, ScoreFunction::for_model(ScoreKind::sup_norm, p), Equation::nonlinear, true);
  EXPECT_TRUE(ahead.forcing_lookahead());
  // With xi = 0 the lookahead score is the saturated plain score.
  const PathState s0 = ahead.initial_state();
  EXPECT_NEAR(ahead.score(s0), 1.25 * std::tanh(0.5 / 1.25) / 1.25, 1e-15);
  p.regime = NoiseRegime::strat_red(0.5, 0.5, 0.1);
  EXPECT_EQ(deterministic_steps(SpdePathModel(p, ScoreFunction::for_model(ScoreKind::sup_norm, p))), 0u);
  EXPECT_FALSE(SpdePathModel(p, ScoreFunction::for_model(ScoreKind::sup_norm, p), Equation::nonlinear, true).forcing_lookahead());
}
