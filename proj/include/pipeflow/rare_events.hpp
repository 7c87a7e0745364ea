#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pipeflow/errors.hpp"
#include "pipeflow/noise.hpp"
#include "pipeflow/parallel.hpp"
#include "pipeflow/spde.hpp"

namespace pipeflow {

/// A discrete-time path model driven by a fixed number of standard normals per step.
/// step() must be deterministic given the state and the normals, and safe to call concurrently
/// on distinct states.
template <class M>
concept ScoredPathModel = requires(const M& m, typename M::State& s, const typename M::State& cs,
                                   std::span<const double> z) {
  { m.initial_state() } -> std::same_as<typename M::State>;
  { m.num_steps() } -> std::convertible_to<std::size_t>;
  { m.normals_per_step() } -> std::convertible_to<std::size_t>;
  m.step(s, z);
  { m.score(cs) } -> std::convertible_to<double>;
};

/// Number of leading steps whose state does not depend on the normals. Models may declare it through
/// deterministic_steps(); the default is 0.
template <ScoredPathModel M>
std::size_t deterministic_steps(const M& m) {
  if constexpr (requires { { m.deterministic_steps() } -> std::convertible_to<std::size_t>; })
    return m.deterministic_steps();
  else
    return 0;
}

enum class ScoreKind { scaled_l1, sup_norm };

inline std::string to_string(ScoreKind k) { return k == ScoreKind::scaled_l1 ? "l1" : "linf"; }

inline ScoreKind score_from_string(const std::string& s) {
  if (s == "l1") return ScoreKind::scaled_l1;
  if (s == "linf") return ScoreKind::sup_norm;
  throw usage_error("unknown score '" + s + "' (expected l1 or linf)");
}

/// ||q||_1 / (q_+ L) or ||q||_inf / q_+; the turbulent state has score 1.
struct ScoreFunction {
  ScoreKind kind = ScoreKind::sup_norm;
  double normalization = 1.0;

  static ScoreFunction for_model(ScoreKind kind, const ModelParams& p) {
    const double qp = steady_states(p.r).q_plus;
    return {kind, kind == ScoreKind::scaled_l1 ? qp * p.length() : qp};
  }

  double operator()(std::span<const double> q, std::span<const double> weights) const {
    const double v = kind == ScoreKind::scaled_l1 ? l1_norm(q, weights) : sup_norm(q);
    return v / normalization;
  }
};

/// Nonlinear (or linear) SPDE path scored by a norm.
///
/// With forcing_lookahead under additive red noise, a path below the target is scored by the norm of the
/// predicted field q_+ tanh(q exp(sigma_R xi / kappa) / q_+) over the normalization, where
/// sigma_R xi / kappa is the log-growth the current OU state will still contribute while it relaxes and
/// tanh stands in for saturation at the turbulent state. Under Stratonovich red noise the same
/// correction removes most of the randomness from q and collapses the population, so it is not
/// applied. The value stays below 1, so the event {score >= 1} is still {norm >= normalization};
/// only the ranking of unfinished paths changes.
class SpdePathModel {
 public:
  using State = PathState;

  SpdePathModel(const ModelParams& p, ScoreFunction score, Equation eq = Equation::nonlinear,
                bool forcing_lookahead = false)
      : params_(p), stepper_(p, eq), score_(score), weights_(p.grid.weights()) {
    if (forcing_lookahead && p.regime.kind == RegimeKind::additive_red) {
      lookahead_gain_ = p.regime.sigma_R / p.regime.kappa;
      q_plus_ = steady_states(p.r).q_plus;
    }
  }

  State initial_state() const { return stepper_.initial_state(params_.q0); }
  std::size_t num_steps() const { return params_.num_steps(); }
  std::size_t normals_per_step() const { return stepper_.normals_per_step(); }
  void step(State& s, std::span<const double> z) const { stepper_.step(s, z); }
  double score(const State& s) const {
    const double plain = score_(s.q, weights_);
    if (lookahead_gain_ == 0.0 || plain >= 1.0) return plain;
    std::vector<double> ahead = stepper_.xi_field(s);
    for (std::size_t j = 0; j < ahead.size(); ++j)
      ahead[j] = q_plus_ * std::tanh(s.q[j] * std::exp(lookahead_gain_ * ahead[j]) / q_plus_);
    return std::min(score_(ahead, weights_), std::nextafter(1.0, 0.0));
  }
  bool forcing_lookahead() const { return lookahead_gain_ != 0.0; }
  // Additive red noise enters through xi, which starts at 0, so the first step is deterministic.
  std::size_t deterministic_steps() const {
    const auto& m = stepper_.effective_model();
    return m.q_noise_scale == 0.0 && m.has_ou ? 1 : 0;
  }

  const ModelParams& params() const { return params_; }
  const SpdeStepper& stepper() const { return stepper_; }
  const ScoreFunction& score_function() const { return score_; }

 private:
  ModelParams params_;
  SpdeStepper stepper_;
  ScoreFunction score_;
  std::vector<double> weights_;
  double lookahead_gain_ = 0.0;
  double q_plus_ = 1.0;
};

/// dX = -theta X dt + sigma dW advanced by its exact transition; score is X.
struct ScalarOuModel {
  struct State {
    double x;
    std::size_t step;
  };

  double theta = 1.0;
  double sigma = 1.0;
  double x0 = 0.0;
  double T = 1.0;
  double dt = 0.01;

  State initial_state() const { return {x0, 0}; }
  std::size_t num_steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }
  std::size_t normals_per_step() const { return 1; }
  void step(State& s, std::span<const double> z) const {
    const double decay = std::exp(-theta * dt);
    const double sd = sigma * std::sqrt(-std::expm1(-2.0 * theta * dt) / (2.0 * theta));
    s.x = decay * s.x + sd * z[0];
    ++s.step;
  }
  double score(const State& s) const { return s.x; }
};

struct McEstimate {
  double p_hat;
  double std_error;
  std::size_t n_paths;
  std::size_t successes;
};

/// Fraction of independent paths whose running-max score reaches `level` by the horizon.
/// Path i uses RngStream(seed, i); a path stops as soon as it succeeds.
template <ScoredPathModel M>
McEstimate mc_estimate(const M& model, double level, std::size_t n_paths, std::uint64_t seed,
                       std::size_t workers = 1) {
  if (n_paths == 0) throw usage_error("mc_estimate: n_paths must be >= 1");
  std::vector<unsigned char> hit(n_paths, 0);
  const std::size_t steps = model.num_steps();
  const std::size_t nps = model.normals_per_step();
  parallel_for(n_paths, workers, [&](std::size_t i, std::size_t) {
    RngStream rng(seed, i);
    auto st = model.initial_state();
    if (model.score(st) >= level) {
      hit[i] = 1;
      return;
    }
    std::vector<double> z(nps);
    for (std::size_t n = 0; n < steps; ++n) {
      rng.fill_normal(z);
      model.step(st, z);
      if (model.score(st) >= level) {
        hit[i] = 1;
        return;
      }
    }
  });
  const std::size_t k = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  const double p = static_cast<double>(k) / static_cast<double>(n_paths);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n_paths)), n_paths, k};
}

struct TamsConfig {
  std::size_t n_trajectories = 50;
  std::size_t kill_count = 1;
  std::size_t max_iterations = 20000;
  std::size_t repetitions = 10;
  std::size_t stagnation_limit = 50;
  double target = 1.0;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (n_trajectories < 2) throw usage_error("TamsConfig: need at least 2 trajectories");
    if (kill_count < 1 || kill_count >= n_trajectories) throw usage_error("TamsConfig: need 1 <= kill_count < N");
    if (repetitions < 1) throw usage_error("TamsConfig: repetitions must be >= 1");
    if (!std::isfinite(target)) throw usage_error("TamsConfig: target must be finite");
  }
};

/// A stored TAMS path: every normal it consumed and its score after each step (index 0 = initial).
/// max_score is the running max over the random part of the history (indices past the deterministic prefix).
struct TamsTrajectory {
  std::vector<double> normals;
  std::vector<double> score_history;
  double max_score = -std::numeric_limits<double>::infinity();
  std::uint64_t stream = 0;
  std::int64_t parent = -1;
  std::size_t branch_step = 0;
};

struct TamsEstimate {
  double p_hat = 0.0;
  double log_p_hat = 0.0;  // natural log of p_hat; stays finite where p_hat underflows
  std::size_t iterations = 0;
  std::vector<double> levels;
  std::vector<std::size_t> killed;
  std::vector<TamsTrajectory> trajectories;
  bool hit_iteration_cap = false;
  double wall_time = 0.0;

  std::size_t successes(double target) const {
    return static_cast<std::size_t>(std::count_if(trajectories.begin(), trajectories.end(),
                                                  [&](const TamsTrajectory& t) { return t.max_score >= target; }));
  }
};

namespace detail {

/// Replays `prefix` (whole steps), then continues with fresh normals from rng until the horizon.
/// The running max starts at history index `first`.
template <ScoredPathModel M>
TamsTrajectory run_trajectory(const M& model, std::span<const double> prefix, RngStream& rng, std::size_t first) {
  const std::size_t steps = model.num_steps();
  const std::size_t nps = model.normals_per_step();
  TamsTrajectory tr;
  tr.stream = rng.stream();
  tr.normals.resize(steps * nps);
  tr.score_history.resize(steps + 1);
  std::copy(prefix.begin(), prefix.end(), tr.normals.begin());
  rng.fill_normal(std::span<double>(tr.normals).subspan(prefix.size()));
  auto st = model.initial_state();
  tr.score_history[0] = model.score(st);
  for (std::size_t n = 0; n < steps; ++n) {
    model.step(st, std::span<const double>(tr.normals).subspan(n * nps, nps));
    tr.score_history[n + 1] = model.score(st);
  }
  tr.max_score = *std::max_element(tr.score_history.begin() + static_cast<std::ptrdiff_t>(first), tr.score_history.end());
  return tr;
}

}  // namespace detail

/// Adaptive multilevel splitting with running-max score. At each iteration the kill level is the
/// kill_count-th lowest running max; every path at or below it is replaced by a clone of a uniformly
/// chosen survivor, which replays the survivor's normals up to the first step above the level and
/// continues with fresh noise. p_hat = prod_j (1 - k_j/N) * (fraction reaching target).
///
/// Scores over the deterministic prefix (the initial state plus deterministic_steps(model) steps) are
/// identical for every path; they are checked against the target once and excluded from the running
/// max, so a path that only decays is not tied with all the others at its starting score.
template <ScoredPathModel M>
TamsEstimate tams_estimate(const M& model, const TamsConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t N = cfg.n_trajectories;
  const std::size_t nps = model.normals_per_step();
  const std::size_t first = std::min(deterministic_steps(model) + 1, model.num_steps());
  TamsEstimate est;
  {
    auto st = model.initial_state();
    bool reached = model.score(st) >= cfg.target;
    std::vector<double> zero(nps, 0.0);
    for (std::size_t n = 0; n + 1 < first && !reached; ++n) {
      model.step(st, zero);
      reached = model.score(st) >= cfg.target;
    }
    if (reached) {
      est.p_hat = 1.0;
      est.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return est;
    }
  }
  est.trajectories.resize(N);
  parallel_for(N, cfg.workers, [&](std::size_t i, std::size_t) {
    RngStream rng(cfg.base_seed, i);
    est.trajectories[i] = detail::run_trajectory(model, {}, rng, first);
  });
  RngStream selector(cfg.base_seed, ~std::uint64_t{0});
  std::uint64_t next_stream = N;
  double log_weight = 0.0;
  double best_level = -std::numeric_limits<double>::infinity();
  std::size_t stagnant = 0;
  std::vector<double> maxima(N);

  while (true) {
    for (std::size_t i = 0; i < N; ++i) maxima[i] = est.trajectories[i].max_score;
    std::vector<double> sorted = maxima;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cfg.kill_count - 1), sorted.end());
    const double level = sorted[cfg.kill_count - 1];
    if (level >= cfg.target) break;
    if (est.iterations >= cfg.max_iterations) {
      est.hit_iteration_cap = true;
      break;
    }
    std::vector<std::size_t> killed, survivors;
    for (std::size_t i = 0; i < N; ++i) (maxima[i] <= level ? killed : survivors).push_back(i);
    if (survivors.empty())
      throw degeneracy_error("TAMS: all " + std::to_string(N) + " trajectories share the score " + std::to_string(level) +
                             "; cannot branch");
    if (level > best_level) {
      best_level = level;
      stagnant = 0;
    } else if (++stagnant >= cfg.stagnation_limit) {
      throw degeneracy_error("TAMS: kill level stuck at " + std::to_string(level) + " for " +
                             std::to_string(cfg.stagnation_limit) + " iterations");
    }
    est.levels.push_back(level);
    est.killed.push_back(killed.size());
    log_weight += std::log1p(-static_cast<double>(killed.size()) / static_cast<double>(N));

    struct Job {
      std::size_t slot;
      std::size_t parent;
      std::size_t branch;
      std::uint64_t stream;
    };
    std::vector<Job> jobs;
    for (std::size_t slot : killed) {
      const std::size_t parent = survivors[selector.uniform_index(survivors.size())];
      const auto& h = est.trajectories[parent].score_history;
      const std::size_t branch =
          static_cast<std::size_t>(std::find_if(h.begin() + static_cast<std::ptrdiff_t>(first), h.end(),
                                                [&](double s) { return s > level; }) -
                                   h.begin());
      jobs.push_back({slot, parent, branch, next_stream++});
    }
    std::vector<TamsTrajectory> fresh(jobs.size());
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t j, std::size_t) {
      const Job& job = jobs[j];
      RngStream rng(cfg.base_seed, job.stream);
      const auto& parent = est.trajectories[job.parent].normals;
      fresh[j] = detail::run_trajectory(model, std::span<const double>(parent).first(job.branch * nps), rng, first);
      fresh[j].parent = static_cast<std::int64_t>(job.parent);
      fresh[j].branch_step = job.branch;
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) est.trajectories[jobs[j].slot] = std::move(fresh[j]);
    ++est.iterations;
  }

  const double frac = static_cast<double>(est.successes(cfg.target)) / static_cast<double>(N);
  est.log_p_hat = log_weight + std::log(frac);
  est.p_hat = std::exp(est.log_p_hat);
  est.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return est;
}

struct TamsSummary {
  std::vector<TamsEstimate> runs;
  double mean = 0.0;
  double std_error = 0.0;  // standard deviation of the runs / sqrt(repetitions)
};

/// Independent repetitions; repetition r uses base seed derived from (cfg.base_seed, r).
template <ScoredPathModel M>
TamsSummary tams_repetitions(const M& model, const TamsConfig& cfg) {
  cfg.validate();
  TamsSummary out;
  out.runs.resize(cfg.repetitions);
  for (std::size_t r = 0; r < cfg.repetitions; ++r) {
    TamsConfig c = cfg;
    c.base_seed = cfg.base_seed + 0x9E3779B97F4A7C15ULL * (r + 1);
    out.runs[r] = tams_estimate(model, c);
  }
  double s = 0.0, s2 = 0.0;
  for (const auto& e : out.runs) {
    s += e.p_hat;
    s2 += e.p_hat * e.p_hat;
  }
  const double R = static_cast<double>(cfg.repetitions);
  out.mean = s / R;
  const double var = cfg.repetitions > 1 ? std::max(0.0, (s2 - R * out.mean * out.mean) / (R - 1.0)) : 0.0;
  out.std_error = std::sqrt(var / R);
  return out;
}

/// Re-runs a stored trajectory to recover its states every `stride` steps.
inline TrajectoryRecord replay_trajectory(const SpdePathModel& model, const TamsTrajectory& tr, std::size_t stride) {
  const auto& p = model.params();
  const SpdeStepper& stepper = model.stepper();
  const auto w = p.grid.weights();
  const std::size_t nps = model.normals_per_step();
  PathState st = model.initial_state();
  TrajectoryRecord rec;
  rec.grid = p.grid;
  auto save = [&](double t) {
    rec.times.push_back(t);
    rec.snapshots.push_back(st.q);
    rec.norm_l1.push_back(l1_norm(st.q, w));
    rec.norm_inf.push_back(sup_norm(st.q));
    if (p.regime.is_red()) rec.xi_snapshots.push_back(stepper.xi_field(st));
  };
  save(0.0);
  const std::size_t steps = model.num_steps();
  for (std::size_t n = 0; n < steps; ++n) {
    model.step(st, std::span<const double>(tr.normals).subspan(n * nps, nps));
    if ((n + 1) % stride == 0 || n + 1 == steps) save(static_cast<double>(n + 1) * p.dt);
  }
  rec.clamped = st.clamped;
  return rec;
}

}  // namespace pipeflow
