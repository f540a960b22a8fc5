#pragma once

#include <cstdint>
#include <vector>

#include "milab/abstraction.hpp"
#include "milab/factored_cdp.hpp"

namespace milab {

// One supervised example for invariant-parent search: a real predictor
// vector, a real target, and the id of the environment the example came
// from.
struct RegressionSample {
  std::vector<double> predictors;
  double target = 0.0;
  int env_id = 0;
};

struct OlsFit {
  std::vector<double> coef;  // one per selected column, intercept last
  std::vector<double> residuals;
};

// Least squares of target on the selected predictor columns plus an
// intercept. Throws SingularDesign when the design matrix is rank deficient.
OlsFit fit_ols(const std::vector<RegressionSample>& samples, const std::vector<int>& columns);

// Invariance test for residuals grouped by environment. Per environment e:
// a Welch two-sample t test of mean(res_e) vs mean(res_rest) and a two-sided
// variance-ratio F test, combined as 2 * min(p_t, p_F); the returned p is
// |E| * min over environments (Bonferroni over the per-environment
// comparisons), clamped to [0,1]. Needs >= 2 environments with >= 2
// residuals each.
double residual_invariance_test(const std::vector<std::vector<double>>& residuals_by_env);

struct SubsetVerdict {
  std::vector<int> subset;  // variable indices (positions in the enumerable set)
  double p = 0.0;
};

struct IcpResult {
  int target = 0;
  double alpha = 0.05;
  std::vector<SubsetVerdict> accepted;   // p >= alpha, enumeration order
  std::vector<SubsetVerdict> rejected;   // p < alpha (or degenerate fits)
  std::vector<int> parent_estimate;      // intersection of accepted subsets
  // True when every subset was rejected: the invariance model itself is
  // implausible at this level. parent_estimate then falls back to the full
  // enumerable set so downstream pooling degrades to no pooling.
  bool model_rejected = false;
};

// Core search: enumerates subsets of `enumerable` (by size, lexicographic)
// up to max_subset_size, fits OLS on subset + always_on columns + intercept,
// and tests residual invariance across environments. With fewer than two
// environments nothing can be falsified and every subset is accepted with
// p = 1. Subsets whose fit is singular are placed in `rejected` with p = -1.
IcpResult icp_over_samples(const std::vector<RegressionSample>& samples,
                           const std::vector<int>& enumerable,
                           const std::vector<int>& always_on, double alpha, int max_subset_size,
                           int target_tag);

// Adapter from logged transitions: target = next value of variable
// `target`, predictors = current state values as reals, plus the action as
// one extra always-on regressor when the process has more than one action.
std::vector<RegressionSample> regression_samples(const std::vector<EnvironmentDataset>& data,
                                                 const CdpShape& shape, int target);

IcpResult icp_for_target(const std::vector<EnvironmentDataset>& data, const CdpShape& shape,
                         int target, double alpha, int max_subset_size = -1);

struct IcpAllResult {
  std::vector<IcpResult> per_target;
  AbstractionPhi phi;  // index_sets[i] = parent estimate for variable i
};

// Runs the search for every variable and assembles the recovered abstraction.
// alpha is the family-wise level of the joint claim "every estimate is a
// subset of the true parents": each per-target search runs at alpha / d
// (Bonferroni), so the exceedance probability of the whole family stays
// below alpha. Callers wanting a specific per-target level should use
// icp_for_target directly.
IcpAllResult icp_all(const std::vector<EnvironmentDataset>& data, const CdpShape& shape,
                     double alpha, int max_subset_size = -1);

}  // namespace milab
