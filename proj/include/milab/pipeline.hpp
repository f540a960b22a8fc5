#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "milab/sampling.hpp"
#include "milab/serialization.hpp"

namespace milab {

// Where the process under study comes from:
//   kind = "linear_chain": the built-in three-variable chain with its three
//          collection policies and probe query;
//   kind = "synth": a random process drawn from `synth` with seed
//          `synth_seed` (the run seed when unset);
//   kind = "file": a process document loaded from `path`.
struct InstanceConfig {
  std::string kind = "linear_chain";
  SynthSpec synth;
  std::optional<std::uint64_t> synth_seed;
  std::string path;
};

// Everything a run needs beyond the seed. Parsed from a JSON document whose
// keys mirror the field names; unknown keys are rejected so typos fail loudly.
struct ExperimentConfig {
  InstanceConfig instance;
  int env_count = 3;
  // Optional state-independent action distribution per environment. When
  // empty, linear_chain uses its built-in mixture policies and the other
  // instance kinds draw one Dirichlet row per environment from the run seed.
  std::vector<std::vector<double>> policy_rows;
  double alpha = 0.05;
  int horizon = 10;
  std::int64_t samples_per_env = 1000;
  std::vector<std::int64_t> sample_grid{50, 100, 200, 500, 1000, 100000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // Probe transition (truth is filled in from the process). linear_chain
  // defaults to its built-in probe.
  std::optional<StateVector> query_x;
  std::optional<int> query_a;
  std::optional<StateVector> query_x_next;
  std::string estimator = "invariant";  // which model the planner consumes
  std::string dataset_path;             // when set, read records instead of collecting
  std::optional<std::vector<std::vector<int>>> phi_override;  // skip ICP's abstraction
  double tol = 1e-9;
};

ExperimentConfig config_from_json(const Json& j);
ExperimentConfig default_config();

// A concrete process with its data-collection policies.
struct Instance {
  FactoredCdp cdp;
  std::vector<Policy> policies;
  int horizon = 10;
  std::optional<TransitionQuery> query;
};

Instance build_instance(const ExperimentConfig& config, std::uint64_t seed);

// One dataset per environment: from dataset_path when configured, otherwise
// collected fresh with a per-environment seed stream.
std::vector<EnvironmentDataset> gather_data(const ExperimentConfig& config,
                                            const Instance& instance, std::uint64_t seed);

// collect -> parent search -> pooled estimation -> planning, reported as one
// JSON document. Byte-identical output for equal (config, seed): hash maps
// are drained in sorted order and the document's keys are ordered. A run
// whose data spans fewer than two environments cannot falsify any parent
// set; the report flags that (icp_uninformative) and the abstraction
// degrades to empty index sets, i.e. unconditional per-variable pooling.
Json run_pipeline(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace milab
