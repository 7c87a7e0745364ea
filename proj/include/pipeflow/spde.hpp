#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pipeflow/errors.hpp"
#include "pipeflow/noise.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

struct ModelParams {
  explicit ModelParams(const Grid& grid_ = Grid(10.0, 101))
      : grid(grid_), q0(Field::constant(grid_, 0.5)), g(Field::constant(grid_, 1.0)) {}

  double r = 1.0 / 15.0;
  Grid grid;
  double T = 10.0;
  double dt = 0.01;
  NoiseRegime regime = NoiseRegime::ito(0.5);
  NoiseSpec spec = NoiseSpec::shifted_gaussian(100);
  Field q0;
  Field g;
  double alpha = 1.0;

  double length() const { return grid.length(); }

  std::size_t num_steps() const {
    const double n = T / dt;
    return static_cast<std::size_t>(std::llround(n));
  }

  void validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw usage_error("ModelParams: r must be positive");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw usage_error("ModelParams: dt must be positive");
    if (!(T >= dt) || !std::isfinite(T)) throw usage_error("ModelParams: T must be >= dt");
    if (std::abs(T / dt - std::round(T / dt)) > 1e-6) throw usage_error("ModelParams: T must be a multiple of dt");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw usage_error("ModelParams: alpha must be >= 0");
    if (!(q0.grid == grid) || !(g.grid == grid)) throw usage_error("ModelParams: q0 and g must live on the model grid");
    for (double v : q0.values)
      if (v < 0.0) throw usage_error("ModelParams: q0 must be nonnegative");
    for (double v : g.values)
      if (v < 0.0) throw usage_error("ModelParams: g must be nonnegative");
    regime.validate();
    spec.validate();
  }
};

struct SteadyStates {
  double laminar = 0.0;
  double q_minus;
  double q_plus;
  double saddle() const { return q_minus; }
};

inline SteadyStates steady_states(double r) {
  if (!(r > 0.0)) throw domain_error("steady_states: r must be positive");
  const double s = std::sqrt(r / (r + 1.0));
  return {0.0, 1.0 - s, 1.0 + s};
}

enum class Equation { nonlinear, linear };

/// Mutable state of one path: grid values, OU coefficients (scaled by 1/sqrt(zeta)), step counter.
struct PathState {
  std::vector<double> q;
  std::vector<double> xi;
  std::size_t step = 0;
  std::size_t clamped = 0;
  std::vector<double> dw, xi_field, work;  // scratch owned by the path
};

/// One exponential-Euler step of the Itô form of the model:
///   q <- P_dt [ q + phi N(q) + s q dW ],   phi = (e^{d dt} - 1)/d,
/// where P_dt is the exact cable semigroup with dissipation d (1 for the nonlinear model, alpha for the
/// linear one) and N collects the cubic term, the Itô correction and the red-noise coupling. The factor
/// phi makes spatially constant equilibria exact fixed points. Results are clamped at 0.
class SpdeStepper {
 public:
  SpdeStepper(const ModelParams& p, Equation eq)
      : eq_((p.validate(), eq)),
        r_(p.r),
        dt_(p.dt),
        dissipation_(eq == Equation::nonlinear ? 1.0 : p.alpha),
        n_(p.grid.size()),
        propagator_(p.grid, p.dt, dissipation_),
        synth_(p.spec, p.grid),
        model_(ito_form(p.regime, p.spec, p.grid)),
        joint_(p.regime.kind == RegimeKind::strat_red ? JointOuIncrement::make(p.dt, p.regime.kappa)
                                                        : JointOuIncrement{0.0, 0.0, 0.0}),
        sigma_xi_(p.regime.sigma_xi) {
    phi_ = dissipation_ > 0.0 ? std::expm1(dissipation_ * dt_) / dissipation_ : dt_;
    if (model_.has_ou) {
      ou_decay_ = std::exp(-p.regime.kappa * dt_);
      ou_scale_ = std::sqrt(-std::expm1(-2.0 * p.regime.kappa * dt_) / (2.0 * p.regime.kappa));
    }
  }

  std::size_t grid_size() const { return n_; }
  std::size_t mode_count() const { return synth_.mode_count(); }
  std::size_t normals_per_step() const {
    return model_.noise_shared_with_ou ? 2 * synth_.mode_count() : synth_.mode_count();
  }
  const EffectiveModel& effective_model() const { return model_; }
  const ModeSynthesizer& synthesizer() const { return synth_; }
  double dt() const { return dt_; }

  /// Deterministic part of the step given the noise field dw (already a Q-Wiener increment, unscaled)
  /// and the OU field xi_field on the grid.
  void advance(std::span<double> q, std::span<const double> dw, std::span<const double> xi_field,
               std::span<double> work, std::size_t& clamped) const {
    const double s = model_.q_noise_scale;
    const double k = model_.xi_coupling;
    const bool cubic = eq_ == Equation::nonlinear;
    for (std::size_t j = 0; j < n_; ++j) {
      const double v = q[j];
      double drift = model_.correction[j] * v;
      if (cubic) drift += (r_ + 1.0) * v * v * (2.0 - v);
      if (k != 0.0) drift += k * v * xi_field[j];
      work[j] = v + phi_ * drift + s * v * dw[j];
    }
    propagator_.apply(work, q);
    for (std::size_t j = 0; j < n_; ++j) {
      if (q[j] < 0.0 && std::isfinite(q[j])) {  // -inf is an overflow, left for the caller to report
        q[j] = 0.0;
        ++clamped;
      }
    }
  }

  /// Full step driven by `normals` (normals_per_step() entries).
  void step(PathState& st, std::span<const double> normals) const {
    const std::size_t K = synth_.mode_count();
    st.dw.resize(n_);
    st.xi_field.resize(n_);
    st.work.resize(n_);
    if (model_.q_noise_scale != 0.0)
      synth_.synthesize(normals.first(K), std::sqrt(dt_), st.dw);
    else
      std::fill(st.dw.begin(), st.dw.end(), 0.0);
    if (model_.has_ou) synth_.synthesize(st.xi, 1.0, st.xi_field);
    advance(st.q, st.dw, st.xi_field, st.work, st.clamped);
    if (model_.has_ou) {
      if (model_.noise_shared_with_ou) {
        for (std::size_t a = 0; a < K; ++a) {
          const double eta = joint_.eta_from_w * normals[a] + joint_.eta_own * normals[K + a];
          st.xi[a] = ou_decay_ * st.xi[a] + sigma_xi_ * eta;
        }
      } else {
        for (std::size_t a = 0; a < K; ++a) st.xi[a] = ou_decay_ * st.xi[a] + sigma_xi_ * ou_scale_ * normals[a];
      }
    }
    ++st.step;
    for (double v : st.q)
      if (!std::isfinite(v)) throw integration_failure("non-finite field value", static_cast<double>(st.step) * dt_);
  }

  PathState initial_state(const Field& q0) const {
    PathState st;
    st.q = q0.values;
    st.xi.assign(synth_.mode_count(), 0.0);
    return st;
  }

  /// OU field on the grid for a state.
  std::vector<double> xi_field(const PathState& st) const {
    std::vector<double> out(n_);
    synth_.synthesize(st.xi, 1.0, out);
    return out;
  }

 private:
  Equation eq_;
  double r_;
  double dt_;
  double dissipation_;
  std::size_t n_;
  SemigroupPropagator propagator_;
  ModeSynthesizer synth_;
  EffectiveModel model_;
  JointOuIncrement joint_;
  double sigma_xi_;
  double phi_ = 0.0;
  double ou_decay_ = 1.0;
  double ou_scale_ = 0.0;
};

namespace detail {
inline Field step_with(const Field& q, const ModelParams& params, Equation eq, const Field& noise_increment,
                       const Field& ou_state) {
  const SpdeStepper stepper(params, eq);
  std::vector<double> out = q.values;
  std::vector<double> work(q.size());
  std::size_t clamped = 0;
  stepper.advance(out, noise_increment.values, ou_state.values, work, clamped);
  for (double v : out)
    if (!std::isfinite(v)) throw integration_failure("non-finite field value", params.dt);
  return Field(q.grid, std::move(out));
}
}  // namespace detail

/// One step of the nonlinear model with an explicit Q-Wiener increment field and OU field.
inline Field step_nonlinear(const Field& q, const ModelParams& params, const Field& noise_increment,
                            const Field& ou_state) {
  return detail::step_with(q, params, Equation::nonlinear, noise_increment, ou_state);
}

/// One step of the linear cable model with dissipation alpha.
inline Field step_linear(const Field& u, double alpha, ModelParams params, const Field& noise_increment,
                         const Field& ou_state) {
  params.alpha = alpha;
  return detail::step_with(u, params, Equation::linear, noise_increment, ou_state);
}

inline double sup_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double l1_norm(std::span<const double> v, std::span<const double> weights) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) s += weights[j] * std::abs(v[j]);
  return s;
}

struct FirstPassage {
  double level;
  std::optional<double> time;
};

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<std::vector<double>> snapshots;
  std::vector<double> norm_l1;
  std::vector<double> norm_inf;
  std::vector<FirstPassage> first_passage;  // sorted by level
  std::vector<std::vector<double>> xi_snapshots;
  std::size_t clamped = 0;
  Grid grid{10.0, 101};

  std::optional<double> passage_time(double level) const {
    for (const auto& fp : first_passage)
      if (fp.level == level) return fp.time;
    throw usage_error("TrajectoryRecord: level was not tracked");
  }
};

/// Tracks tau_J = first time sup-norm exceeds J, interpolating linearly between steps.
class PassageTracker {
 public:
  explicit PassageTracker(std::vector<double> levels) {
    std::sort(levels.begin(), levels.end());
    for (double J : levels) out_.push_back({J, std::nullopt});
  }
  void observe(double t, double sup) {
    for (auto& fp : out_) {
      if (fp.time) continue;
      if (sup > fp.level) {
        if (!has_prev_) {
          fp.time = t;
        } else {
          const double frac = (fp.level - prev_sup_) / (sup - prev_sup_);
          fp.time = prev_t_ + std::clamp(frac, 0.0, 1.0) * (t - prev_t_);
        }
      }
    }
    has_prev_ = true;
    prev_t_ = t;
    prev_sup_ = sup;
  }
  const std::vector<FirstPassage>& result() const { return out_; }

 private:
  std::vector<FirstPassage> out_;
  bool has_prev_ = false;
  double prev_t_ = 0.0;
  double prev_sup_ = 0.0;
};

/// Runs one path to T with normals drawn from rng. Snapshots are kept every save_stride steps
/// (plus the final step); first passage is tracked on every step.
inline TrajectoryRecord simulate_path(const ModelParams& params, RngStream& rng, std::size_t save_stride,
                                      const std::vector<double>& thresholds, Equation eq = Equation::nonlinear) {
  if (save_stride == 0) throw usage_error("simulate_path: save_stride must be >= 1");
  const SpdeStepper stepper(params, eq);
  const auto w = params.grid.weights();
  PathState st = stepper.initial_state(params.q0);
  TrajectoryRecord rec;
  rec.grid = params.grid;
  PassageTracker tracker(thresholds);
  const bool red = params.regime.is_red();
  auto save = [&](double t) {
    rec.times.push_back(t);
    rec.snapshots.push_back(st.q);
    rec.norm_l1.push_back(l1_norm(st.q, w));
    rec.norm_inf.push_back(sup_norm(st.q));
    if (red) rec.xi_snapshots.push_back(stepper.xi_field(st));
  };
  save(0.0);
  tracker.observe(0.0, sup_norm(st.q));
  const std::size_t steps = params.num_steps();
  std::vector<double> z(stepper.normals_per_step());
  for (std::size_t n = 1; n <= steps; ++n) {
    rng.fill_normal(z);
    stepper.step(st, z);
    const double t = static_cast<double>(n) * params.dt;
    tracker.observe(t, sup_norm(st.q));
    if (n % save_stride == 0 || n == steps) save(t);
  }
  rec.first_passage = tracker.result();
  rec.clamped = st.clamped;
  return rec;
}

/// M(t) = e^{-(T-t) alpha} ||u(t)||_1 at the recorded times.
inline std::vector<double> observable_M(const TrajectoryRecord& rec, double alpha, double T) {
  std::vector<double> m(rec.times.size());
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = std::exp(-(T - rec.times[k]) * alpha) * rec.norm_l1[k];
  return m;
}

/// Two systems driven by identical normals.
struct CoupledResult {
  TrajectoryRecord first;
  TrajectoryRecord second;
  double min_gap = std::numeric_limits<double>::infinity();  // min over grid and time of first - second
  std::optional<double> first_exceeds_cap;                    // first time first's sup-norm exceeded the cap
};

/// Runs (pa, ea) and (pb, eb) on the same normal sequence. The gap first - second is tracked until the
/// first system's sup-norm exceeds `cap`.
inline CoupledResult coupled_run(const ModelParams& pa, Equation ea, const ModelParams& pb, Equation eb,
                                 RngStream& rng, std::size_t save_stride, double cap) {
  if (!(pa.grid == pb.grid) || pa.dt != pb.dt || pa.T != pb.T)
    throw usage_error("coupled_run: systems must share grid, dt and T");
  const SpdeStepper sa(pa, ea);
  const SpdeStepper sb(pb, eb);
  if (sa.normals_per_step() != sb.normals_per_step())
    throw usage_error("coupled_run: systems consume different numbers of normals per step");
  const auto w = pa.grid.weights();
  PathState a = sa.initial_state(pa.q0);
  PathState b = sb.initial_state(pb.q0);
  CoupledResult res;
  res.first.grid = pa.grid;
  res.second.grid = pb.grid;
  auto save = [&](TrajectoryRecord& rec, const PathState& st, double t) {
    rec.times.push_back(t);
    rec.snapshots.push_back(st.q);
    rec.norm_l1.push_back(l1_norm(st.q, w));
    rec.norm_inf.push_back(sup_norm(st.q));
  };
  bool tracking = true;
  auto gap = [&](double t) {
    if (!tracking) return;
    if (sup_norm(a.q) > cap) {
      tracking = false;
      res.first_exceeds_cap = t;
      return;
    }
    for (std::size_t j = 0; j < a.q.size(); ++j) res.min_gap = std::min(res.min_gap, a.q[j] - b.q[j]);
  };
  save(res.first, a, 0.0);
  save(res.second, b, 0.0);
  gap(0.0);
  std::vector<double> z(sa.normals_per_step());
  const std::size_t steps = pa.num_steps();
  for (std::size_t n = 1; n <= steps; ++n) {
    rng.fill_normal(z);
    sa.step(a, z);
    sb.step(b, z);
    const double t = static_cast<double>(n) * pa.dt;
    gap(t);
    if (n % save_stride == 0 || n == steps) {
      save(res.first, a, t);
      save(res.second, b, t);
    }
  }
  res.first.clamped = a.clamped;
  res.second.clamped = b.clamped;
  return res;
}

/// Nonlinear q against the linear solution with alpha = 1 under the same noise; gap tracked while q <= 2.
inline CoupledResult coupled_compare(const ModelParams& params, RngStream& rng, std::size_t save_stride = 1) {
  ModelParams lin = params;
  lin.alpha = 1.0;
  return coupled_run(params, Equation::nonlinear, lin, Equation::linear, rng, save_stride, 2.0);
}

}  // namespace pipeflow
