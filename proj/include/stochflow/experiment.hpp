#pragma once

// Experiment configuration (JSON, strict schema) and orchestration behind
// the stochflow command-line tool.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stochflow/verify.hpp"

namespace stochflow {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

struct FlowSettings {
  std::vector<double> times{0.25, 0.5, 1.0};
  double alpha = 0.5;
  double near_distance = 0.0;  // <= 0: radius / 2
  std::optional<int> level;    // nullopt: reference resolution
  bool expect_explosion = false;
};

struct TwoPointSettings {
  double dist = 1e-3;
  int pair_count = 10;
  std::optional<int> level;  // nullopt: highest configured level
};

struct HypothesisSettings {
  std::vector<double> radii{4.0, 8.0, 16.0, 32.0, 64.0};
  int grid_density = 8;
  double slack = 1.5;
};

struct ExperimentConfig {
  std::string family_name;
  nlohmann::json family_params = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::size_t paths = 100;
  double radius = 1.0;
  std::string grid_kind;  // spiral, line, halton, explicit; empty: by dimension
  std::size_t grid_count = 25;
  std::vector<Vector> grid_points;
  std::vector<int> levels{4, 6, 8, 10};
  int n_max = 14;
  std::vector<double> moment_orders{2.0, 4.0, 8.0};
  Vector point;  // empty: first unit vector
  int workers = 0;
  std::string output_dir = "out";
  SolverConfig solver;
  BoundConstants constants;
  bool constants_given = false;
  FlowSettings flow;
  TwoPointSettings two_point;
  HypothesisSettings hypothesis;
  std::vector<std::string> inequalities;  // empty: every registered name
  nlohmann::json raw;  // the parsed file, echoed into reports
};

/// Builds a named built-in family from its parameter object.
VectorFieldSystem make_family(const std::string& name, const nlohmann::json& params);

/// Parses and cross-checks a config; problems are appended to `diagnostics`
/// as "key: message" and the returned config is only meaningful when none
/// were added.
ExperimentConfig parse_config(const nlohmann::json& j, std::vector<std::string>& diagnostics);

/// Reads and parses a config file; throws ConfigError with all diagnostics.
ExperimentConfig load_config(const std::string& path);

/// Diagnostics for a config file, empty when valid.
std::vector<std::string> validate_config_file(const std::string& path);

std::vector<std::string> experiment_names();

struct RunOutcome {
  int exit_code = 0;  // 0 all hard verdicts pass, 2 some failed
  nlohmann::json report;  // also written to <output_dir>/<experiment>.json
  std::vector<std::string> files;  // every file written, relative to output_dir
  std::vector<std::pair<std::string, std::string>> artifacts;  // CSV name and content
};

/// Runs an experiment and writes its report files. `timestamp` goes into
/// the report verbatim (it is the only field that may differ between runs).
RunOutcome run_experiment(const std::string& experiment, const ExperimentConfig& cfg,
                          const std::string& timestamp = "");

/// Same numerical content, without touching the filesystem.
RunOutcome compute_experiment(const std::string& experiment, const ExperimentConfig& cfg);

}  // namespace stochflow
