#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mie/equilibrium.hpp"
#include "mie/estimation.hpp"
#include "mie/sim.hpp"

namespace mie::lab {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3, kDataError = 4, kSweepError = 5 };

struct AnalysisToggles {
  bool mie = true;
  bool stability = true;
  std::size_t max_iterations = 2000;
  double jacobian_step = 1e-5;
};

struct EstimateOptions {
  double smoothing = 0.0;
  bool cca = true;
  std::size_t cca_dim = 1;
  bool depth_comparison = true;
  std::vector<int> depths{0, 1, 2};
  double holdout = 0.25;
  double process_noise = 1e-4;
  double observation_noise = 1e-2;
};

struct SweepAxis {
  std::string key;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 1;

  double value(std::size_t k) const { return count == 1 ? lo : lo + (hi - lo) * double(k) / double(count - 1); }
};

/// "parameters" varies scenario keys and labels each cell from a scalar
/// series; "basin" runs the mean-field fixed-point iteration from a grid of
/// initial states.
struct SweepSpec {
  std::string kind = "parameters";
  std::vector<SweepAxis> axes;
  std::string metric;
  double ratio = 1e-3;
  bool analyze = false;
  double merge_tolerance = 1e-4;
  /// Coordinate names, or prefixes such as "policy", compared when merging
  /// basin endpoints; empty compares the whole state.
  std::vector<std::string> merge_on;
};

struct ExperimentConfig {
  nlohmann::json scenario;
  RunConfig run;
  std::optional<PerturbationSpec> perturbation;
  AnalysisToggles analysis;
  ToleranceConfig tolerances;
  DistanceWeights weights;
  std::optional<SweepSpec> sweep;
  EstimateOptions estimate;
  std::string output = "out";
};

/// Throws ConfigError; parse errors name the line and column.
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);

/// Equilibrium and stability reports for the final state of a log.
struct Analysis {
  nlohmann::json equilibrium;
  nlohmann::json stability;
};

/// A cell that failed for a reason other than numerical divergence.
class SweepFailure : public std::runtime_error {
 public:
  SweepFailure(std::size_t cell, const std::string& message)
      : std::runtime_error("cell " + std::to_string(cell) + ": " + message), cell_(cell) {}
  std::size_t cell() const noexcept { return cell_; }

 private:
  std::size_t cell_;
};

Analysis analyze_log(const InteractionLog& log, const Scenario& scenario, const ExperimentConfig& config);

struct SweepOutput {
  nlohmann::json report;
  std::string csv;
};

/// Cells are evaluated on at most `jobs` threads; outputs list them in grid
/// order with the last axis varying fastest. Throws SweepFailure.
SweepOutput run_sweep(const ExperimentConfig& config, std::size_t jobs);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mie::lab
