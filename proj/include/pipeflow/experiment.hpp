#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pipeflow/bounds.hpp"
#include "pipeflow/errors.hpp"
#include "pipeflow/gamma.hpp"
#include "pipeflow/noise.hpp"
#include "pipeflow/rare_events.hpp"
#include "pipeflow/spde.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

/// Everything one run of the command-line tool needs. Field-valued inputs (q0, g, f) are given either as
/// a single constant or as one value per grid node.
struct ExperimentConfig {
  std::string preset;

  struct Model {
    double r = 1.0 / 15.0;
    double L = 10.0;
    std::size_t n_points = 101;
    double T = 10.0;
    double dt = 0.01;
    double alpha = 1.0;
    std::vector<double> q0{0.5};
    std::vector<double> g{1.0};
    std::string equation = "nonlinear";
  } model;

  struct Noise {
    std::string regime = "ito-white";
    double sigma_I = 0.5;
    double sigma_S = 0.0;
    double sigma_R = 0.0;
    double kappa = 0.0;
    double sigma_xi = 0.0;
    std::size_t m = 100;
    std::string spectrum = "shifted-gaussian";  // or "explicit", which reads zeta
    std::vector<double> zeta;
  } noise;

  struct Score {
    std::string kind = "linf";
    double J = 1.25;  // level in units of q; the L1 event is ||q||_1 >= J L
    bool forcing_lookahead = true;
  } score;

  struct Bounds {
    std::vector<std::string> select;
    double J0 = 0.25;
    double t_min = 0.01;
    std::size_t n_max = 64;
    std::vector<double> f{1.0};
  } bounds;

  struct Tams {
    std::size_t n_trajectories = 50;
    std::size_t kill_count = 1;
    std::size_t max_iterations = 20000;
    std::size_t repetitions = 10;
    std::size_t stagnation_limit = 50;
    std::size_t dump_paths = 1;
  } tams;

  struct Mc {
    std::size_t n_paths = 10000;
  } mc;

  struct Simulate {
    std::size_t paths = 1;
    std::size_t save_stride = 10;
    std::vector<double> thresholds{1.25};
  } simulate;

  struct Validate {
    std::size_t martingale_paths = 10000;
    std::size_t ordering_runs = 200;
    std::size_t domination_paths = 10000;
    std::size_t tams_runs = 100;
    std::size_t toy_mc_paths = 1000000;
  } validate;

  struct Run {
    std::uint64_t seed = 0;
    std::size_t workers = 0;  // 0 = all available cores
    std::string out = "out";
  } run;

  /// Throws usage_error naming the offending key.
  void validate_all() const;
};

inline const std::vector<std::string>& known_bounds() {
  static const std::vector<std::string> names{"ito-restrained",    "ito-sup",          "strat-white-fixed",
                                              "strat-white-min",   "strat-white-sup",  "additive-red-min",
                                              "additive-red-sup",  "strat-red-min",    "strat-red-sup"};
  return names;
}

inline NoiseRegime regime_of(const ExperimentConfig& c);

inline void ExperimentConfig::validate_all() const {
  auto bad = [](const std::string& key, const std::string& why) { throw usage_error("config key '" + key + "': " + why); };
  if (!(model.r > 0.0)) bad("model.r", "must be positive");
  if (!(model.L > 0.0)) bad("model.L", "must be positive");
  if (model.n_points < 3) bad("model.n_points", "must be >= 3");
  if (!(model.dt > 0.0)) bad("model.dt", "must be positive");
  if (!(model.T >= model.dt)) bad("model.T", "must be >= model.dt");
  if (std::abs(model.T / model.dt - std::round(model.T / model.dt)) > 1e-6) bad("model.T", "must be a multiple of model.dt");
  if (!(model.alpha >= 0.0)) bad("model.alpha", "must be >= 0");
  auto field_ok = [&](const std::vector<double>& v, const std::string& key) {
    if (v.size() != 1 && v.size() != model.n_points) bad(key, "needs 1 or model.n_points values");
    for (double x : v)
      if (!std::isfinite(x) || x < 0.0) bad(key, "values must be finite and >= 0");
  };
  field_ok(model.q0, "model.q0");
  if (std::all_of(model.q0.begin(), model.q0.end(), [](double x) { return x == 0.0; })) bad("model.q0", "must not vanish");
  field_ok(model.g, "model.g");
  field_ok(bounds.f, "bounds.f");
  if (model.equation != "nonlinear" && model.equation != "linear") bad("model.equation", "expected nonlinear or linear");
  try {
    (void)regime_from_string(noise.regime);
  } catch (const usage_error&) {
    bad("noise.regime", "expected ito-white, strat-white, additive-red or strat-red");
  }
  if (noise.spectrum == "explicit") {
    if (noise.zeta.size() != noise.m + 1) bad("noise.zeta", "needs noise.m + 1 entries");
  } else if (noise.spectrum != "shifted-gaussian") {
    bad("noise.spectrum", "expected shifted-gaussian or explicit");
  }
  for (double z : noise.zeta)
    if (!(z >= 0.0)) bad("noise.zeta", "entries must be >= 0");
  if (score.kind != "l1" && score.kind != "linf") bad("score.kind", "expected l1 or linf");
  if (!(score.J > 0.0)) bad("score.J", "must be positive");
  for (const auto& b : bounds.select)
    if (std::find(known_bounds().begin(), known_bounds().end(), b) == known_bounds().end())
      bad("bounds.select", "unknown bound '" + b + "'");
  if (!(bounds.J0 > 0.0)) bad("bounds.J0", "must be positive");
  if (!(bounds.t_min > 0.0) || bounds.t_min > model.T) bad("bounds.t_min", "must lie in (0, model.T]");
  if (tams.n_trajectories < 2) bad("tams.n_trajectories", "must be >= 2");
  if (tams.kill_count < 1 || tams.kill_count >= tams.n_trajectories) bad("tams.kill_count", "must satisfy 1 <= kill_count < n_trajectories");
  if (tams.repetitions < 1) bad("tams.repetitions", "must be >= 1");
  if (mc.n_paths < 1) bad("mc.n_paths", "must be >= 1");
  if (simulate.save_stride < 1) bad("simulate.save_stride", "must be >= 1");
  if (run.out.empty()) bad("run.out", "must not be empty");
  try {
    regime_of(*this).validate();
  } catch (const usage_error& e) {
    bad("noise", e.what());
  }
}

inline NoiseRegime regime_of(const ExperimentConfig& c) {
  return {regime_from_string(c.noise.regime), c.noise.sigma_I, c.noise.sigma_S, c.noise.sigma_R, c.noise.kappa,
          c.noise.sigma_xi};
}

inline NoiseSpec spec_of(const ExperimentConfig& c) {
  if (c.noise.spectrum == "explicit") {
    NoiseSpec s;
    s.m = c.noise.m;
    s.zeta = c.noise.zeta;
    return s;
  }
  return NoiseSpec::shifted_gaussian(c.noise.m);
}

inline Grid grid_of(const ExperimentConfig& c) { return Grid(c.model.L, c.model.n_points); }

inline Field field_of(const Grid& g, const std::vector<double>& v) {
  return v.size() == 1 ? Field::constant(g, v[0]) : Field(g, v);
}

inline Equation equation_of(const ExperimentConfig& c) {
  return c.model.equation == "linear" ? Equation::linear : Equation::nonlinear;
}

inline ModelParams model_params(const ExperimentConfig& c) {
  const Grid grid = grid_of(c);
  ModelParams p(grid);
  p.r = c.model.r;
  p.T = c.model.T;
  p.dt = c.model.dt;
  p.alpha = c.model.alpha;
  p.regime = regime_of(c);
  p.spec = spec_of(c);
  p.q0 = field_of(grid, c.model.q0);
  p.g = field_of(grid, c.model.g);
  p.validate();
  return p;
}

/// Path model for TAMS and MC; its score reaches 1 exactly at the configured level J.
inline SpdePathModel path_model(const ExperimentConfig& c) {
  const ModelParams p = model_params(c);
  const ScoreKind kind = score_from_string(c.score.kind);
  const ScoreFunction sf{kind, kind == ScoreKind::scaled_l1 ? c.score.J * p.length() : c.score.J};
  return SpdePathModel(p, sf, equation_of(c), c.score.forcing_lookahead);
}

inline RedNoiseParams red_params_of(const ExperimentConfig& c) {
  return {c.noise.kappa, c.noise.sigma_R, c.noise.sigma_xi};
}

struct NamedBound {
  std::string name;
  BoundResult result;
  std::vector<AuditRow> audit;
};

/// Evaluates one bound by name at the configured level J (f = g = 1 sup-norm forms use the mean of
/// log q0; the Gaussian forms use f, g and q0 from the config with J' = ||f||_1 J).
inline NamedBound evaluate_bound(const ExperimentConfig& c, const std::string& name) {
  const ModelParams p = model_params(c);
  const double L = p.length();
  NamedBound out{name, {}, {}};
  if (name == "ito-restrained" || name == "ito-sup") {
    ItoBoundQuery q{c.bounds.J0, norm_1(p.q0) / L, c.score.J, c.model.alpha, c.model.T, L, c.noise.sigma_I,
                    zero_mode_intensity(p.spec)};
    if (name == "ito-restrained") {
      out.result = ito_restrained_bound(q);
    } else {
      out.result = ito_sup_bound(q, c.bounds.t_min);
      for (double t : log_time_grid(c.bounds.t_min, c.model.T)) {
        const double v = ito_restrained_value(q, t);
        constexpr double nan = std::numeric_limits<double>::quiet_NaN();
        out.audit.push_back({t, nan, nan, nan, v, clip_probability(v)});
      }
    }
    return out;
  }
  SupNormQuery sq;
  sq.J = c.score.J;
  sq.L = L;
  sq.T = c.model.T;
  sq.t_min = c.bounds.t_min;
  sq.zeta00 = zero_mode_intensity(p.spec);
  GaussBoundQuery gq(p.grid);
  gq.f = field_of(p.grid, c.bounds.f);
  gq.g = p.g;
  gq.q0 = p.q0;
  gq.J_prime = norm_1(gq.f) * c.score.J;
  gq.T = c.model.T;
  gq.t_min = c.bounds.t_min;
  gq.spec = p.spec;
  gq.n_max = c.bounds.n_max;
  gq.sigma_S = c.noise.sigma_S;
  gq.red = red_params_of(c);
  if (name == "strat-white-fixed") {
    out.result = strat_white_bound_at(gq, c.model.T);
  } else if (name == "strat-white-min") {
    out.result = strat_white_min_bound(gq, &out.audit);
  } else if (name == "strat-white-sup") {
    sq.mean_log_q0 = mean_log(p.q0);
    out.result = strat_white_sup_bound(sq, c.noise.sigma_S, &out.audit);
  } else if (name == "additive-red-min" || name == "strat-red-min") {
    const GammaKind k = name == "additive-red-min" ? GammaKind::additive_red : GammaKind::strat_red;
    out.result = red_min_bound(gq, k, &out.audit);
  } else if (name == "additive-red-sup" || name == "strat-red-sup") {
    const GammaKind k = name == "additive-red-sup" ? GammaKind::additive_red : GammaKind::strat_red;
    sq.mean_log_q0 = mean_log(p.q0);
    out.result = red_sup_bound(sq, k, red_params_of(c), &out.audit);
  } else {
    throw usage_error("unknown bound '" + name + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Presets

inline ExperimentConfig preset_base(const std::string& name, const std::string& score) {
  ExperimentConfig c;
  c.preset = name;
  c.score.kind = score;
  return c;
}

inline std::map<std::string, ExperimentConfig> make_presets() {
  std::map<std::string, ExperimentConfig> out;
  for (const std::string score : {"l1", "linf"}) {
    {
      ExperimentConfig c = preset_base("fig1-ito-" + score, score);
      c.noise.regime = "ito-white";
      c.noise.sigma_I = 0.5;
      c.bounds.select = {"ito-restrained", "ito-sup"};
      out.emplace(c.preset, c);
    }
    {
      ExperimentConfig c = preset_base("fig1-strat-" + score, score);
      c.noise.regime = "strat-white";
      c.noise.sigma_I = 0.0;
      c.noise.sigma_S = 0.5;
      c.bounds.select = {"strat-white-min", "strat-white-sup"};
      out.emplace(c.preset, c);
    }
    {
      ExperimentConfig c = preset_base("fig2-addred-" + score, score);
      c.noise.regime = "additive-red";
      c.noise.sigma_I = 0.0;
      c.noise.sigma_R = 1.5;
      c.noise.kappa = 0.5;
      c.noise.sigma_xi = 0.1;
      c.bounds.select = {"additive-red-min", "additive-red-sup"};
      out.emplace(c.preset, c);
    }
    for (const auto& [tag, kappa] : {std::pair{"k005", 0.05}, std::pair{"k05", 0.5}}) {
      ExperimentConfig c = preset_base(std::string("fig2-stratred-") + tag + "-" + score, score);
      c.noise.regime = "strat-red";
      c.noise.sigma_I = 0.0;
      c.noise.sigma_R = 0.5;
      c.noise.kappa = kappa;
      c.noise.sigma_xi = 0.1;
      c.bounds.select = {"strat-red-min", "strat-red-sup"};
      out.emplace(c.preset, c);
    }
  }
  {
    ExperimentConfig c = preset_base("cor46-sweep", "linf");
    c.noise.regime = "strat-white";
    c.noise.sigma_I = 0.0;
    c.noise.sigma_S = 0.5;
    c.bounds.select = {"strat-white-sup"};
    c.bounds.t_min = 1e-3;
    out.emplace(c.preset, c);
  }
  return out;
}

/// Short names that resolve to the sup-norm variant of a preset.
inline const std::map<std::string, std::string>& preset_aliases() {
  static const std::map<std::string, std::string> a{{"fig2-addred", "fig2-addred-linf"},
                                                    {"fig2-stratred-k005", "fig2-stratred-k005-linf"},
                                                    {"fig2-stratred-k05", "fig2-stratred-k05-linf"}};
  return a;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : make_presets()) names.push_back(k);
  for (const auto& [k, v] : preset_aliases()) names.push_back(k);
  std::sort(names.begin(), names.end());
  return names;
}

inline ExperimentConfig preset(const std::string& name) {
  const auto presets = make_presets();
  std::string key = name;
  if (auto a = preset_aliases().find(name); a != preset_aliases().end()) key = a->second;
  auto it = presets.find(key);
  if (it == presets.end()) throw usage_error("unknown preset '" + name + "' (see list-presets)");
  ExperimentConfig c = it->second;
  c.preset = name;
  return c;
}

}  // namespace pipeflow
