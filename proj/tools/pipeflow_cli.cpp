// pipeflow_cli: simulations, bounds, TAMS/MC estimates and validation checks driven by a YAML config.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config/domain error, 3 numeric failure.

#include <CLI11.hpp>

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "pipeflow/config_yaml.hpp"
#include "pipeflow/experiment.hpp"
#include "pipeflow/validation.hpp"

namespace fs = std::filesystem;
using namespace pipeflow;

namespace {

constexpr const char* kVersion = "0.1.0";

struct check_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path), path_(path) {
    if (!out_) throw io_error("cannot write '" + path.string() + "'");
    out_ << std::setprecision(15);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... v) {
    bool first = true;
    ((out_ << (first ? "" : ",") << v, first = false), ...);
    out_ << '\n';
  }

  std::ostream& stream() { return out_; }

  ~CsvWriter() {
    out_.flush();
    if (!out_) std::cerr << "warning: write to '" << path_.string() << "' failed\n";
  }

 private:
  std::ofstream out_;
  fs::path path_;
};

std::string optional_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(15) << *v;
  return os.str();
}

/// Quotes a free-text CSV field.
std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& c,
                    const std::vector<std::string>& outputs) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "command" << YAML::Value << command;
  e << YAML::Key << "tool_version" << YAML::Value << kVersion;
  e << YAML::Key << "compiler" << YAML::Value << __VERSION__;
  e << YAML::Key << "eigen_version" << YAML::Value
    << (std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
        std::to_string(EIGEN_MINOR_VERSION));
  e << YAML::Key << "seed" << YAML::Value << c.run.seed;
  e << YAML::Key << "workers" << YAML::Value << c.run.workers;
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  e << YAML::Key << "created" << YAML::Value << stamp;
  e << YAML::Key << "outputs" << YAML::Value << YAML::Flow << outputs;
  e << YAML::Key << "config" << YAML::Value << YAML::Load(to_yaml(c));
  e << YAML::EndMap;
  std::ofstream out(dir / "manifest.yaml");
  if (!out) throw io_error("cannot write manifest in '" + dir.string() + "'");
  out << e.c_str() << '\n';
}

fs::path prepare_out(const ExperimentConfig& c) {
  const fs::path dir(c.run.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_record(const fs::path& path, const TrajectoryRecord& rec) {
  std::vector<std::string> header{"t", "norm_l1", "norm_inf"};
  for (std::size_t j = 0; j < rec.grid.size(); ++j) header.push_back("q" + std::to_string(j));
  CsvWriter w(path, header);
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    auto& os = w.stream();
    os << rec.times[k] << ',' << rec.norm_l1[k] << ',' << rec.norm_inf[k];
    for (double v : rec.snapshots[k]) os << ',' << v;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------------------------

int cmd_simulate(const ExperimentConfig& c) {
  const ModelParams p = model_params(c);
  const Equation eq = equation_of(c);
  const fs::path dir = prepare_out(c);
  std::vector<std::string> outputs{"summary.csv"};
  std::vector<std::string> header{"path", "clamped"};
  for (double J : c.simulate.thresholds) header.push_back("tau_" + optional_value(J));
  CsvWriter summary(dir / "summary.csv", header);
  for (std::size_t i = 0; i < c.simulate.paths; ++i) {
    RngStream rng(c.run.seed, i);
    const TrajectoryRecord rec = simulate_path(p, rng, c.simulate.save_stride, c.simulate.thresholds, eq);
    const std::string name = "trajectory_" + std::to_string(i) + ".csv";
    write_record(dir / name, rec);
    outputs.push_back(name);
    auto& os = summary.stream();
    os << i << ',' << rec.clamped;
    for (double J : c.simulate.thresholds) os << ',' << optional_value(rec.passage_time(J));
    os << '\n';
  }
  write_manifest(dir, "simulate", c, outputs);
  std::cout << "simulate: " << c.simulate.paths << " path(s) written to " << dir.string() << "\n";
  return 0;
}

int cmd_bound(const ExperimentConfig& c) {
  if (c.bounds.select.empty()) {
    std::cerr << "warning: bounds.select is empty; nothing to evaluate\n";
    return 0;
  }
  const fs::path dir = prepare_out(c);
  std::vector<std::string> outputs{"bounds.csv"};
  CsvWriter summary(dir / "bounds.csv", {"bound", "provenance", "raw", "clipped", "mean", "stdev", "phi_arg", "t_opt"});
  for (const auto& name : c.bounds.select) {
    const NamedBound nb = evaluate_bound(c, name);
    const BoundResult& b = nb.result;
    summary.row(name, b.provenance, b.raw, b.clipped, b.mean, b.stdev, b.phi_arg, optional_value(b.t_opt));
    std::cout << name << ": clipped=" << b.clipped << " raw=" << b.raw << " t_opt=" << optional_value(b.t_opt) << "\n";
    if (!nb.audit.empty()) {
      const std::string file = "audit_" + name + ".csv";
      CsvWriter audit(dir / file, {"t", "mean", "stdev", "phi_arg", "raw", "clipped"});
      for (const auto& row : nb.audit) audit.row(row.t, row.mean, row.stdev, row.phi_arg, row.raw, row.clipped);
      outputs.push_back(file);
    }
  }
  write_manifest(dir, "bound", c, outputs);
  return 0;
}

int cmd_tams(const ExperimentConfig& c) {
  const SpdePathModel model = path_model(c);
  TamsConfig cfg;
  cfg.n_trajectories = c.tams.n_trajectories;
  cfg.kill_count = c.tams.kill_count;
  cfg.max_iterations = c.tams.max_iterations;
  cfg.repetitions = c.tams.repetitions;
  cfg.stagnation_limit = c.tams.stagnation_limit;
  cfg.base_seed = c.run.seed;
  cfg.workers = c.run.workers;
  const TamsSummary s = tams_repetitions(model, cfg);
  const fs::path dir = prepare_out(c);
  std::vector<std::string> outputs{"tams_runs.csv", "tams_summary.csv"};
  {
    CsvWriter runs(dir / "tams_runs.csv",
                   {"repetition", "p_hat", "log10_p_hat", "iterations", "successes", "hit_iteration_cap", "wall_time"});
    for (std::size_t r = 0; r < s.runs.size(); ++r) {
      const TamsEstimate& e = s.runs[r];
      runs.row(r, e.p_hat, e.log_p_hat / std::log(10.0), e.iterations, e.successes(1.0), e.hit_iteration_cap ? 1 : 0,
               e.wall_time);
    }
    CsvWriter summary(dir / "tams_summary.csv", {"preset", "score", "J", "mean", "std_error", "repetitions", "n_trajectories"});
    summary.row(c.preset, c.score.kind, c.score.J, s.mean, s.std_error, cfg.repetitions, cfg.n_trajectories);
  }
  // Highest-scoring paths of the first repetition, replayed on the save stride.
  const TamsEstimate& first = s.runs.front();
  std::vector<std::size_t> order(first.trajectories.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return first.trajectories[a].max_score > first.trajectories[b].max_score;
  });
  const std::size_t dump = std::min(c.tams.dump_paths, order.size());
  for (std::size_t k = 0; k < dump; ++k) {
    const std::string name = "tams_path_" + std::to_string(k) + ".csv";
    write_record(dir / name, replay_trajectory(model, first.trajectories[order[k]], c.simulate.save_stride));
    outputs.push_back(name);
  }
  write_manifest(dir, "tams", c, outputs);
  std::cout << "tams: mean p_hat=" << s.mean << " +- " << s.std_error << " over " << cfg.repetitions
            << " repetition(s); first run reached the target in " << first.successes(1.0) << "/" << cfg.n_trajectories
            << " paths\n";
  return 0;
}

int cmd_mc(const ExperimentConfig& c) {
  const SpdePathModel model = path_model(c);
  const McEstimate e = mc_estimate(model, 1.0, c.mc.n_paths, c.run.seed, c.run.workers);
  const fs::path dir = prepare_out(c);
  {
    CsvWriter w(dir / "mc.csv", {"preset", "score", "J", "p_hat", "std_error", "n_paths", "successes"});
    w.row(c.preset, c.score.kind, c.score.J, e.p_hat, e.std_error, e.n_paths, e.successes);
  }
  write_manifest(dir, "mc", c, {"mc.csv"});
  std::cout << "mc: p_hat=" << e.p_hat << " +- " << e.std_error << " (" << e.successes << "/" << e.n_paths << ")\n";
  return 0;
}

int cmd_validate(const ExperimentConfig& c) {
  ValidationOptions o;
  o.seed = c.run.seed;
  o.workers = c.run.workers;
  o.martingale_paths = c.validate.martingale_paths;
  o.ordering_runs = c.validate.ordering_runs;
  o.domination_paths = c.validate.domination_paths;
  o.tams_runs = c.validate.tams_runs;
  o.toy_mc_paths = c.validate.toy_mc_paths;
  const auto results = run_validation_suite(o);
  const fs::path dir = prepare_out(c);
  bool all = true;
  {
    CsvWriter w(dir / "validate.csv", {"check", "passed", "seconds", "detail"});
    for (const auto& r : results) {
      w.row(r.name, r.passed ? 1 : 0, r.seconds, quoted(r.detail));
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << std::fixed << std::setprecision(1) << r.seconds
                << " s): " << r.detail << "\n"
                << std::defaultfloat;
      all = all && r.passed;
    }
  }
  write_manifest(dir, "validate", c, {"validate.csv"});
  if (!all) throw check_failure("validate: at least one check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turbulence-onset SPDE toolkit: simulations, lower bounds and rare-event estimates"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, preset_name, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "YAML experiment config");
    sub->add_option("--preset", preset_name, "named preset (see list-presets)");
    sub->add_option("--seed", seed, "base seed (overrides run.seed)");
    sub->add_option("--workers", workers, "worker threads, 0 = all cores (overrides run.workers)");
    sub->add_option("--out", out_dir, "output directory (overrides run.out)");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "simulate paths and write trajectory CSVs");
  CLI::App* bound = app.add_subcommand("bound", "evaluate the selected lower bounds over the time grid");
  CLI::App* tams = app.add_subcommand("tams", "estimate the transition probability with TAMS");
  CLI::App* mc = app.add_subcommand("mc", "estimate the transition probability by plain Monte Carlo");
  CLI::App* validate = app.add_subcommand("validate", "run the validation checks");
  CLI::App* list = app.add_subcommand("list-presets", "print the preset names");
  for (CLI::App* sub : {simulate, bound, tams, mc, validate}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (list->parsed()) {
      for (const auto& n : preset_names()) std::cout << n << "\n";
      return 0;
    }
    if (!config_path.empty() && !preset_name.empty())
      throw usage_error("give either --config or --preset (a config file can name a preset with 'preset:')");
    ExperimentConfig c = !config_path.empty() ? load_config(config_path)
                         : !preset_name.empty() ? preset(preset_name)
                                                : ExperimentConfig{};
    if (seed) c.run.seed = *seed;
    if (workers) c.run.workers = *workers;
    if (!out_dir.empty()) c.run.out = out_dir;
    if (c.run.workers == 0) c.run.workers = default_workers();
    c.validate_all();

    if (simulate->parsed()) return cmd_simulate(c);
    if (bound->parsed()) return cmd_bound(c);
    if (tams->parsed()) return cmd_tams(c);
    if (mc->parsed()) return cmd_mc(c);
    if (validate->parsed()) return cmd_validate(c);
  } catch (const check_failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const integration_failure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const numeric_guard_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const degeneracy_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
