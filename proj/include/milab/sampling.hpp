#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "milab/factored_cdp.hpp"

namespace milab {

using Rng = std::mt19937_64;

// Derives an independent-looking stream for (seed, stream). splitmix64-style
// mixing so that neighboring seeds and stream ids do not collide.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream);

// Inverse-CDF draw from a probability row. The row is assumed normalized;
// trailing mass rounds into the last support point.
int sample_categorical(Rng& rng, std::span<const double> probs);

// One episode of `horizon` steps from mu0 under the policy. Records carry
// t = 0..horizon-1 and the given env tag.
std::vector<TransitionRecord> sample_trajectory(const FactoredCdp& cdp, const Policy& policy,
                                                int horizon, std::uint64_t seed, int env_id = 0);

// One dataset per policy; policy k collects `episodes_per_env` episodes under
// env_id = k with an independent seed stream.
std::vector<EnvironmentDataset> collect_environments(const FactoredCdp& cdp,
                                                     const std::vector<Policy>& policies,
                                                     int episodes_per_env, int horizon,
                                                     std::uint64_t seed);

// Exactly n records under one policy: whole episodes of `horizon` steps,
// truncating the last one. Used by sample-size sweeps.
EnvironmentDataset collect_n_records(const FactoredCdp& cdp, const Policy& policy, std::int64_t n,
                                     int horizon, std::uint64_t seed, int env_id = 0);

// Parameters for a randomly synthesized factored process. Parent sets are
// drawn per variable: a size in [0, max_parents], then that many distinct
// variable indices. Factor rows and mu0 are symmetric-Dirichlet draws,
// rewards uniform on [0, r_max].
struct SynthSpec {
  int d = 3;
  std::vector<int> domain_sizes;  // must have length d
  int action_count = 2;
  int max_parents = 2;
  double gamma = 0.9;
  double r_max = 1.0;
  double dirichlet_alpha = 1.0;
};

FactoredCdp synth_random_cdp(const SynthSpec& spec, std::uint64_t seed);

// Reconstruction of the three-variable linear chain instance:
//   d = 3 variables with integer values -10..10 (index v+10), parents S_i = {i},
//   next value = clamp(round(0.9 * value) + a + noise), noise ~ (1,4,6,4,1)/16
//   on {-3..1} (mean -1, sd 1), actions 0..2 acting as noise-mean levels.
// The three data-collecting policies are state-independent mixtures putting
// 0.6 on "their" level e and 0.2 on each other level, so environment e is a
// soft intervention of the effective noise mean while every action keeps
// positive probability everywhere. Start state is pinned at value (0,0,0),
// episodes run 10 steps, reward 1 - (|v1|+|v2|+|v3|)/30 favors staying
// centered.
struct LinearChainInstance {
  FactoredCdp cdp;
  std::vector<Policy> policies;
  int horizon = 10;
  // Probe transition for estimator comparisons: x=(0,0,0), a=0,
  // x'=(-1,0,0), exact probability (6/16)*(4/16)*(4/16).
  TransitionQuery query;
};

LinearChainInstance linear_chain_benchmark();

}  // namespace milab
