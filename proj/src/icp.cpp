#include "milab/icp.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "milab/stats.hpp"

namespace milab {

OlsFit fit_ols(const std::vector<RegressionSample>& samples, const std::vector<int>& columns) {
  const std::int64_t n = static_cast<std::int64_t>(samples.size());
  const int k = static_cast<int>(columns.size()) + 1;  // + intercept
  if (n < k) throw InvalidInput("fit_ols: fewer samples than coefficients");
  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd y(n);
  for (std::int64_t r = 0; r < n; ++r) {
    const auto& s = samples[r];
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] < 0 || columns[c] >= static_cast<int>(s.predictors.size()))
        throw InvalidInput("fit_ols: column index out of range");
      X(r, c) = s.predictors[columns[c]];
    }
    X(r, k - 1) = 1.0;
    y(r) = s.target;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < k) throw SingularDesign("fit_ols: collinear design matrix");
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd res = y - X * beta;
  OlsFit fit;
  fit.coef.assign(beta.data(), beta.data() + k);
  fit.residuals.assign(res.data(), res.data() + n);
  return fit;
}

double residual_invariance_test(const std::vector<std::vector<double>>& residuals_by_env) {
  if (residuals_by_env.size() < 2)
    throw InvalidInput("residual_invariance_test: need >= 2 environments");
  for (const auto& g : residuals_by_env)
    if (g.size() < 2) throw InvalidInput("residual_invariance_test: need >= 2 residuals per environment");

  const std::size_t envs = residuals_by_env.size();
  double min_p = 1.0;
  for (std::size_t e = 0; e < envs; ++e) {
    std::vector<double> rest;
    for (std::size_t o = 0; o < envs; ++o)
      if (o != e) rest.insert(rest.end(), residuals_by_env[o].begin(), residuals_by_env[o].end());
    const SampleMoments me = sample_moments(residuals_by_env[e]);
    const SampleMoments mr = sample_moments(rest);
    const double p_env = 2.0 * std::min(welch_t_test_p(me, mr), variance_ratio_test_p(me, mr));
    min_p = std::min(min_p, p_env);
  }
  return std::clamp(static_cast<double>(envs) * min_p, 0.0, 1.0);
}

namespace {

// All subsets of `items` with size <= max_size, ordered by size then
// lexicographically. Deterministic so reruns and parallel sweeps agree.
std::vector<std::vector<int>> enumerate_subsets(const std::vector<int>& items, int max_size) {
  std::vector<std::vector<int>> out;
  const int n = static_cast<int>(items.size());
  std::vector<int> combo;
  auto rec = [&](auto&& self, int start, int remaining) -> void {
    if (remaining == 0) {
      out.push_back(combo);
      return;
    }
    for (int i = start; i <= n - remaining; ++i) {
      combo.push_back(items[i]);
      self(self, i + 1, remaining - 1);
      combo.pop_back();
    }
  };
  for (int size = 0; size <= std::min(max_size, n); ++size) rec(rec, 0, size);
  return out;
}

std::vector<std::vector<double>> group_by_env(const std::vector<RegressionSample>& samples,
                                              const std::vector<double>& residuals) {
  std::map<int, std::vector<double>> groups;
  for (std::size_t r = 0; r < samples.size(); ++r)
    groups[samples[r].env_id].push_back(residuals[r]);
  std::vector<std::vector<double>> out;
  out.reserve(groups.size());
  for (auto& [env, g] : groups) out.push_back(std::move(g));
  return out;
}

}  // namespace

IcpResult icp_over_samples(const std::vector<RegressionSample>& samples,
                           const std::vector<int>& enumerable,
                           const std::vector<int>& always_on, double alpha, int max_subset_size,
                           int target_tag) {
  if (samples.empty()) throw InvalidInput("icp: no samples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("icp: alpha must lie in (0,1)");
  if (max_subset_size < 0) max_subset_size = static_cast<int>(enumerable.size());

  std::set<int> env_ids;
  for (const auto& s : samples) env_ids.insert(s.env_id);
  const bool testable = env_ids.size() >= 2;

  const auto subsets = enumerate_subsets(enumerable, max_subset_size);
  std::vector<double> pvals(subsets.size(), -1.0);

  const std::int64_t m = static_cast<std::int64_t>(subsets.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < m; ++j) {
    std::vector<int> cols = subsets[j];
    cols.insert(cols.end(), always_on.begin(), always_on.end());
    try {
      const OlsFit fit = fit_ols(samples, cols);
      // One lone environment cannot falsify invariance; accept everything.
      pvals[j] = testable ? residual_invariance_test(group_by_env(samples, fit.residuals)) : 1.0;
    } catch (const SingularDesign&) {
      pvals[j] = -1.0;  // degenerate fit, treated as rejection below
    }
  }

  IcpResult result;
  result.target = target_tag;
  result.alpha = alpha;
  for (std::size_t j = 0; j < subsets.size(); ++j) {
    if (pvals[j] >= alpha)
      result.accepted.push_back({subsets[j], pvals[j]});
    else
      result.rejected.push_back({subsets[j], pvals[j]});
  }

  if (result.accepted.empty()) {
    result.model_rejected = true;
    result.parent_estimate = enumerable;
    std::fprintf(stderr,
                 "icp: every subset rejected for target %d at level %g; "
                 "falling back to the full predictor set\n",
                 target_tag, alpha);
    return result;
  }
  // Intersection over accepted subsets.
  std::set<int> inter(result.accepted.front().subset.begin(),
                      result.accepted.front().subset.end());
  for (const auto& v : result.accepted) {
    std::set<int> cur(v.subset.begin(), v.subset.end());
    std::set<int> keep;
    std::set_intersection(inter.begin(), inter.end(), cur.begin(), cur.end(),
                          std::inserter(keep, keep.begin()));
    inter.swap(keep);
  }
  result.parent_estimate.assign(inter.begin(), inter.end());
  return result;
}

std::vector<RegressionSample> regression_samples(const std::vector<EnvironmentDataset>& data,
                                                 const CdpShape& shape, int target) {
  if (target < 0 || target >= shape.d) throw InvalidInput("regression target out of range");
  std::vector<RegressionSample> out;
  for (const auto& env : data) {
    for (const auto& rec : env.records) {
      RegressionSample s;
      s.predictors.reserve(shape.d + (shape.action_count > 1 ? 1 : 0));
      for (int v : rec.x) s.predictors.push_back(static_cast<double>(v));
      if (shape.action_count > 1) s.predictors.push_back(static_cast<double>(rec.a));
      s.target = static_cast<double>(rec.x_next[target]);
      s.env_id = env.env_id;
      out.push_back(std::move(s));
    }
  }
  if (out.empty()) throw InvalidInput("regression_samples: empty datasets");
  return out;
}

IcpResult icp_for_target(const std::vector<EnvironmentDataset>& data, const CdpShape& shape,
                         int target, double alpha, int max_subset_size) {
  const auto samples = regression_samples(data, shape, target);
  std::vector<int> enumerable(shape.d);
  for (int i = 0; i < shape.d; ++i) enumerable[i] = i;
  // The action is a conditioner of every factor, not a candidate parent, so
  // it joins every fit rather than the subset enumeration.
  std::vector<int> always_on;
  if (shape.action_count > 1) always_on.push_back(shape.d);
  return icp_over_samples(samples, enumerable, always_on, alpha, max_subset_size, target);
}

IcpAllResult icp_all(const std::vector<EnvironmentDataset>& data, const CdpShape& shape,
                     double alpha, int max_subset_size) {
  IcpAllResult all;
  all.per_target.reserve(shape.d);
  // alpha is the family-wise level for the joint claim over all d targets;
  // Bonferroni splits it across the per-target searches.
  const double per_target = alpha / static_cast<double>(shape.d);
  for (int i = 0; i < shape.d; ++i)
    all.per_target.push_back(icp_for_target(data, shape, i, per_target, max_subset_size));
  all.phi.index_sets.resize(shape.d);
  for (int i = 0; i < shape.d; ++i) all.phi.index_sets[i] = all.per_target[i].parent_estimate;
  all.phi.validate(shape.d);
  return all;
}

}  // namespace milab
