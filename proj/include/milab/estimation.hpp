#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "milab/abstraction.hpp"
#include "milab/factored_cdp.hpp"

namespace milab {

enum class EstimatorKind { kMle, kInvariant };

// Count-based transition estimate. Two flavors:
//  - kMle: empirical frequency of full next states per exact (x, a) key.
//  - kInvariant: per-variable next-value counts pooled over every state that
//    shares the variable's abstract value, keyed by ([x]_{S_i}, a). Ragged
//    pools combine as sum(hits)/sum(totals).
// Absent keys are NoData, deliberately distinct from an observed estimate of
// zero.
struct EstimatedModel {
  struct SparseCounts {
    std::vector<std::pair<std::int64_t, std::int64_t>> next;  // (next flat state, hits), sorted
    std::int64_t total = 0;
  };
  struct DimCounts {
    std::vector<std::int64_t> counts;  // per next value of the variable
    std::int64_t total = 0;
  };

  EstimatorKind kind = EstimatorKind::kMle;
  CdpShape shape;
  AbstractionPhi phi;  // invariant flavor only

  std::unordered_map<std::int64_t, SparseCounts> mle;             // key = x_flat * A + a
  std::vector<std::unordered_map<std::int64_t, DimCounts>> dims;  // key = proj_key * A + a

  // P(next | x, a); nullopt on NoData. For the invariant flavor this is the
  // product of the per-variable pooled rows and is NoData if any factor key
  // is unseen.
  std::optional<double> transition_prob(const StateVector& x, int a,
                                        const StateVector& next) const;

  // Next-value distribution of variable i given (x, a). Defined for both
  // flavors; the MLE flavor marginalizes its full-state counts.
  std::optional<std::vector<double>> dim_row(int i, const StateVector& x, int a) const;

  // Throwing variant of transition_prob.
  double transition_prob_or_throw(const StateVector& x, int a, const StateVector& next) const;
};

EstimatedModel estimate_mle(const std::vector<EnvironmentDataset>& data, const CdpShape& shape);
EstimatedModel estimate_invariant(const std::vector<EnvironmentDataset>& data,
                                  const CdpShape& shape, const AbstractionPhi& phi);

// One output row of the estimator-convergence sweep.
struct ConvergenceRow {
  int env_id = 0;
  std::int64_t n = 0;
  std::string estimator;  // "mle" | "invariant"
  std::uint64_t seed = 0;
  double estimate = 0.0;  // uniform fallback when nodata is set
  double truth = 0.0;
  bool nodata = false;
};

struct ConvergenceSpec {
  std::vector<std::int64_t> sample_grid;
  std::vector<std::uint64_t> seeds;
  int horizon = 10;
  TransitionQuery query;
};

// For every (environment, n, seed): draw n records under that environment's
// policy, fit both estimators on the fresh draw, and report the estimated
// probability of the query transition. The invariant flavor pools with the
// parent abstraction of the generating process. NoData rows carry the
// uniform estimate 1/|X| and a raised flag instead of being dropped.
std::vector<ConvergenceRow> convergence_experiment(const FactoredCdp& cdp,
                                                   const std::vector<Policy>& policies,
                                                   const ConvergenceSpec& spec,
                                                   std::uint64_t base_seed);

}  // namespace milab
