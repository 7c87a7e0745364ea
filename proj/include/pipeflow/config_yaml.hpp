#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pipeflow/errors.hpp"
#include "pipeflow/experiment.hpp"

namespace pipeflow {

namespace detail {

/// Shortest decimal text that reads back to the same double (at most 17 significant digits).
inline std::string exact_decimal(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

class ConfigReader {
 public:
  explicit ConfigReader(const YAML::Node& root) : root_(root) {
    if (!root_.IsMap()) throw usage_error("config: top level must be a mapping");
  }

  /// Section `name` with its allowed keys; rejects anything else.
  YAML::Node section(const std::string& name, const std::set<std::string>& allowed) {
    seen_.insert(name);
    YAML::Node s = root_[name];
    if (!s) return s;
    if (!s.IsMap()) throw usage_error("config key '" + name + "': must be a mapping");
    for (const auto& kv : s) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) throw usage_error("config key '" + name + "." + key + "': unknown key");
    }
    return s;
  }

  void finish() const {
    for (const auto& kv : root_) {
      const auto key = kv.first.as<std::string>();
      if (key != "preset" && !seen_.count(key)) throw usage_error("config key '" + key + "': unknown section");
    }
  }

 private:
  YAML::Node root_;
  std::set<std::string> seen_;
};

template <class T>
void read(const YAML::Node& s, const std::string& section, const std::string& key, T& out) {
  if (!s || !s[key]) return;
  try {
    out = s[key].as<T>();
  } catch (const YAML::Exception&) {
    throw usage_error("config key '" + section + "." + key + "': wrong type");
  }
}

/// Scalars become one-element lists.
inline void read_list(const YAML::Node& s, const std::string& section, const std::string& key,
                      std::vector<double>& out) {
  if (!s || !s[key]) return;
  try {
    const YAML::Node n = s[key];
    if (n.IsScalar())
      out = {n.as<double>()};
    else
      out = n.as<std::vector<double>>();
  } catch (const YAML::Exception&) {
    throw usage_error("config key '" + section + "." + key + "': expected a number or a list of numbers");
  }
}

inline void emit_number(YAML::Emitter& e, const std::string& key, double v) {
  e << YAML::Key << key << YAML::Value << exact_decimal(v);
}

inline void emit_list(YAML::Emitter& e, const std::string& key, const std::vector<double>& v) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double x : v) e << exact_decimal(x);
  e << YAML::EndSeq;
}

}  // namespace detail

/// Parses a config document. A `preset` key seeds every field from that preset before the sections apply.
inline ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw usage_error(std::string("config: YAML parse error: ") + e.what());
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  detail::ConfigReader rd(root);
  ExperimentConfig c;
  if (root["preset"]) c = preset(root["preset"].as<std::string>());
  using detail::read;
  using detail::read_list;

  auto m = rd.section("model", {"r", "L", "n_points", "T", "dt", "alpha", "q0", "g", "equation"});
  read(m, "model", "r", c.model.r);
  read(m, "model", "L", c.model.L);
  read(m, "model", "n_points", c.model.n_points);
  read(m, "model", "T", c.model.T);
  read(m, "model", "dt", c.model.dt);
  read(m, "model", "alpha", c.model.alpha);
  read_list(m, "model", "q0", c.model.q0);
  read_list(m, "model", "g", c.model.g);
  read(m, "model", "equation", c.model.equation);

  auto n = rd.section("noise", {"regime", "sigma_I", "sigma_S", "sigma_R", "kappa", "sigma_xi", "m", "spectrum", "zeta"});
  read(n, "noise", "regime", c.noise.regime);
  read(n, "noise", "sigma_I", c.noise.sigma_I);
  read(n, "noise", "sigma_S", c.noise.sigma_S);
  read(n, "noise", "sigma_R", c.noise.sigma_R);
  read(n, "noise", "kappa", c.noise.kappa);
  read(n, "noise", "sigma_xi", c.noise.sigma_xi);
  read(n, "noise", "m", c.noise.m);
  read(n, "noise", "spectrum", c.noise.spectrum);
  read_list(n, "noise", "zeta", c.noise.zeta);

  auto s = rd.section("score", {"kind", "J", "forcing_lookahead"});
  read(s, "score", "kind", c.score.kind);
  read(s, "score", "J", c.score.J);
  read(s, "score", "forcing_lookahead", c.score.forcing_lookahead);

  auto b = rd.section("bounds", {"select", "J0", "t_min", "n_max", "f"});
  if (b && b["select"]) {
    try {
      c.bounds.select = b["select"].IsNull() ? std::vector<std::string>{} : b["select"].as<std::vector<std::string>>();
    } catch (const YAML::Exception&) {
      throw usage_error("config key 'bounds.select': expected a list of bound names");
    }
  }
  read(b, "bounds", "J0", c.bounds.J0);
  read(b, "bounds", "t_min", c.bounds.t_min);
  read(b, "bounds", "n_max", c.bounds.n_max);
  read_list(b, "bounds", "f", c.bounds.f);

  auto t = rd.section("tams", {"n_trajectories", "kill_count", "max_iterations", "repetitions", "stagnation_limit",
                               "dump_paths"});
  read(t, "tams", "n_trajectories", c.tams.n_trajectories);
  read(t, "tams", "kill_count", c.tams.kill_count);
  read(t, "tams", "max_iterations", c.tams.max_iterations);
  read(t, "tams", "repetitions", c.tams.repetitions);
  read(t, "tams", "stagnation_limit", c.tams.stagnation_limit);
  read(t, "tams", "dump_paths", c.tams.dump_paths);

  auto mc = rd.section("mc", {"n_paths"});
  read(mc, "mc", "n_paths", c.mc.n_paths);

  auto sim = rd.section("simulate", {"paths", "save_stride", "thresholds"});
  read(sim, "simulate", "paths", c.simulate.paths);
  read(sim, "simulate", "save_stride", c.simulate.save_stride);
  read_list(sim, "simulate", "thresholds", c.simulate.thresholds);

  auto v = rd.section("validate", {"martingale_paths", "ordering_runs", "domination_paths", "tams_runs", "toy_mc_paths"});
  read(v, "validate", "martingale_paths", c.validate.martingale_paths);
  read(v, "validate", "ordering_runs", c.validate.ordering_runs);
  read(v, "validate", "domination_paths", c.validate.domination_paths);
  read(v, "validate", "tams_runs", c.validate.tams_runs);
  read(v, "validate", "toy_mc_paths", c.validate.toy_mc_paths);

  auto r = rd.section("run", {"seed", "workers", "out"});
  read(r, "run", "seed", c.run.seed);
  read(r, "run", "workers", c.run.workers);
  read(r, "run", "out", c.run.out);

  rd.finish();
  c.validate_all();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Full config as YAML; parse_config(to_yaml(c)) reproduces c exactly.
inline std::string to_yaml(const ExperimentConfig& c) {
  using detail::emit_list;
  using detail::emit_number;
  YAML::Emitter e;
  e << YAML::BeginMap;
  if (!c.preset.empty()) e << YAML::Key << "preset" << YAML::Value << c.preset;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  emit_number(e, "r", c.model.r);
  emit_number(e, "L", c.model.L);
  e << YAML::Key << "n_points" << YAML::Value << c.model.n_points;
  emit_number(e, "T", c.model.T);
  emit_number(e, "dt", c.model.dt);
  emit_number(e, "alpha", c.model.alpha);
  emit_list(e, "q0", c.model.q0);
  emit_list(e, "g", c.model.g);
  e << YAML::Key << "equation" << YAML::Value << c.model.equation;
  e << YAML::EndMap;

  e << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "regime" << YAML::Value << c.noise.regime;
  emit_number(e, "sigma_I", c.noise.sigma_I);
  emit_number(e, "sigma_S", c.noise.sigma_S);
  emit_number(e, "sigma_R", c.noise.sigma_R);
  emit_number(e, "kappa", c.noise.kappa);
  emit_number(e, "sigma_xi", c.noise.sigma_xi);
  e << YAML::Key << "m" << YAML::Value << c.noise.m;
  e << YAML::Key << "spectrum" << YAML::Value << c.noise.spectrum;
  emit_list(e, "zeta", c.noise.zeta);
  e << YAML::EndMap;

  e << YAML::Key << "score" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << c.score.kind;
  emit_number(e, "J", c.score.J);
  e << YAML::Key << "forcing_lookahead" << YAML::Value << c.score.forcing_lookahead;
  e << YAML::EndMap;

  e << YAML::Key << "bounds" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "select" << YAML::Value << YAML::Flow << c.bounds.select;
  emit_number(e, "J0", c.bounds.J0);
  emit_number(e, "t_min", c.bounds.t_min);
  e << YAML::Key << "n_max" << YAML::Value << c.bounds.n_max;
  emit_list(e, "f", c.bounds.f);
  e << YAML::EndMap;

  e << YAML::Key << "tams" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "n_trajectories" << YAML::Value << c.tams.n_trajectories;
  e << YAML::Key << "kill_count" << YAML::Value << c.tams.kill_count;
  e << YAML::Key << "max_iterations" << YAML::Value << c.tams.max_iterations;
  e << YAML::Key << "repetitions" << YAML::Value << c.tams.repetitions;
  e << YAML::Key << "stagnation_limit" << YAML::Value << c.tams.stagnation_limit;
  e << YAML::Key << "dump_paths" << YAML::Value << c.tams.dump_paths;
  e << YAML::EndMap;

  e << YAML::Key << "mc" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "n_paths" << YAML::Value << c.mc.n_paths;
  e << YAML::EndMap;

  e << YAML::Key << "simulate" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "paths" << YAML::Value << c.simulate.paths;
  e << YAML::Key << "save_stride" << YAML::Value << c.simulate.save_stride;
  emit_list(e, "thresholds", c.simulate.thresholds);
  e << YAML::EndMap;

  e << YAML::Key << "validate" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "martingale_paths" << YAML::Value << c.validate.martingale_paths;
  e << YAML::Key << "ordering_runs" << YAML::Value << c.validate.ordering_runs;
  e << YAML::Key << "domination_paths" << YAML::Value << c.validate.domination_paths;
  e << YAML::Key << "tams_runs" << YAML::Value << c.validate.tams_runs;
  e << YAML::Key << "toy_mc_paths" << YAML::Value << c.validate.toy_mc_paths;
  e << YAML::EndMap;

  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.run.seed;
  e << YAML::Key << "workers" << YAML::Value << c.run.workers;
  e << YAML::Key << "out" << YAML::Value << c.run.out;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace pipeflow
