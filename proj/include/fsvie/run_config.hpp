#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fsvie/problem.hpp"
#include "fsvie/projection.hpp"
#include "fsvie/spike.hpp"
#include "fsvie/verify.hpp"

namespace fsvie {

/// Parsed and validated batch-run configuration (JSON schema version 1).
struct RunConfig {
  std::string experiment;  // simulate | adjoint | spike-sweep | mp-check |
                           // game-check | sde-crosscheck | oracle-compare
  std::string problem_name;
  ParamMap problem_params;
  double horizon = 1.0;
  int steps = 8;
  std::string mode = "tree";  // tree | mc
  int paths = 256;
  std::uint64_t seed = 42;
  std::string backend = "exact";  // exact | regression
  RegressionConfig regression;
  double beta_override = -1.0;

  std::string control_type = "constant";  // constant | per_step
  std::vector<double> control_value;
  std::vector<std::vector<double>> control_per_step;

  SpikeSpec spike;
  bool spike_adjoint_form = false;
  int bootstrap_resamples = 200;

  std::vector<int> tau_indices;
  double tolerance = 1e-6;
  std::vector<std::vector<double>> probes;            // mp-check / sde-crosscheck
  std::vector<std::vector<std::vector<double>>> player_probes;  // game-check
  std::string game_check = "nash";                    // nash | saddle
  double oracle_tol = 1e-10;

  std::string resolved;  // canonical JSON echo for the report audit trail
};

/// Parse + validate. Throws std::invalid_argument naming the offending key.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const nlohmann::json& j);

/// Execute one experiment, writing report.json and the CSV tables under
/// out_dir. Returns the process exit status: 0 pass, 2 verification failure.
/// Errors propagate as exceptions (the CLI maps them to exit 1).
int run_experiment(const RunConfig& config, const std::string& out_dir);

}  // namespace fsvie
