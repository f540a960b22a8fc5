#include "milab/estimation.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "milab/errors.hpp"
#include "milab/sampling.hpp"

namespace milab {

namespace {

std::int64_t pair_key(std::int64_t x_flat, int a, int action_count) {
  return x_flat * action_count + a;
}

}  // namespace

std::optional<double> EstimatedModel::transition_prob(const StateVector& x, int a,
                                                      const StateVector& next) const {
  if (kind == EstimatorKind::kMle) {
    const std::int64_t key = pair_key(shape.flat_index(x), a, shape.action_count);
    auto it = mle.find(key);
    if (it == mle.end() || it->second.total == 0) return std::nullopt;
    const std::int64_t next_flat = shape.flat_index(next);
    const auto& entries = it->second.next;
    auto pos = std::lower_bound(entries.begin(), entries.end(), next_flat,
                                [](const auto& e, std::int64_t v) { return e.first < v; });
    const std::int64_t hits =
        (pos != entries.end() && pos->first == next_flat) ? pos->second : 0;
    return static_cast<double>(hits) / static_cast<double>(it->second.total);
  }
  double prob = 1.0;
  for (int i = 0; i < shape.d; ++i) {
    auto row = dim_row(i, x, a);
    if (!row) return std::nullopt;
    prob *= (*row)[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])];
  }
  return prob;
}

std::optional<std::vector<double>> EstimatedModel::dim_row(int i, const StateVector& x,
                                                           int a) const {
  const int dom = shape.domain_sizes[static_cast<std::size_t>(i)];
  if (kind == EstimatorKind::kInvariant) {
    const std::int64_t proj =
        key_over(phi.index_sets[static_cast<std::size_t>(i)], x, shape.domain_sizes);
    auto it = dims[static_cast<std::size_t>(i)].find(pair_key(proj, a, shape.action_count));
    if (it == dims[static_cast<std::size_t>(i)].end() || it->second.total == 0)
      return std::nullopt;
    std::vector<double> row(static_cast<std::size_t>(dom));
    for (int v = 0; v < dom; ++v)
      row[static_cast<std::size_t>(v)] =
          static_cast<double>(it->second.counts[static_cast<std::size_t>(v)]) /
          static_cast<double>(it->second.total);
    return row;
  }
  const std::int64_t key = pair_key(shape.flat_index(x), a, shape.action_count);
  auto it = mle.find(key);
  if (it == mle.end() || it->second.total == 0) return std::nullopt;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(dom), 0);
  for (const auto& [next_flat, hits] : it->second.next) {
    const StateVector next = shape.unflatten(next_flat);
    counts[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])] += hits;
  }
  std::vector<double> row(static_cast<std::size_t>(dom));
  for (int v = 0; v < dom; ++v)
    row[static_cast<std::size_t>(v)] =
        static_cast<double>(counts[static_cast<std::size_t>(v)]) /
        static_cast<double>(it->second.total);
  return row;
}

double EstimatedModel::transition_prob_or_throw(const StateVector& x, int a,
                                                const StateVector& next) const {
  auto p = transition_prob(x, a, next);
  if (!p) throw NoData("no samples for the queried state-action pair");
  return *p;
}

EstimatedModel estimate_mle(const std::vector<EnvironmentDataset>& data,
                            const CdpShape& shape) {
  shape.validate();
  EstimatedModel model;
  model.kind = EstimatorKind::kMle;
  model.shape = shape;
  // Ordered staging map keeps the sparse next-state lists sorted for free.
  std::unordered_map<std::int64_t, std::map<std::int64_t, std::int64_t>> staging;
  for (const auto& env : data) {
    for (const auto& rec : env.records) {
      const std::int64_t key = pair_key(shape.flat_index(rec.x), rec.a, shape.action_count);
      staging[key][shape.flat_index(rec.x_next)] += 1;
    }
  }
  for (auto& [key, hist] : staging) {
    EstimatedModel::SparseCounts counts;
    counts.next.reserve(hist.size());
    for (const auto& [next_flat, hits] : hist) {
      counts.next.emplace_back(next_flat, hits);
      counts.total += hits;
    }
    model.mle.emplace(key, std::move(counts));
  }
  return model;
}

EstimatedModel estimate_invariant(const std::vector<EnvironmentDataset>& data,
                                  const CdpShape& shape, const AbstractionPhi& phi) {
  shape.validate();
  phi.validate(shape.d);
  EstimatedModel model;
  model.kind = EstimatorKind::kInvariant;
  model.shape = shape;
  model.phi = phi;
  model.dims.resize(static_cast<std::size_t>(shape.d));
  for (const auto& env : data) {
    for (const auto& rec : env.records) {
      for (int i = 0; i < shape.d; ++i) {
        const std::int64_t proj =
            key_over(phi.index_sets[static_cast<std::size_t>(i)], rec.x, shape.domain_sizes);
        auto& cell = model.dims[static_cast<std::size_t>(i)][pair_key(
            proj, rec.a, shape.action_count)];
        if (cell.counts.empty())
          cell.counts.assign(static_cast<std::size_t>(
                                 shape.domain_sizes[static_cast<std::size_t>(i)]),
                             0);
        cell.counts[static_cast<std::size_t>(rec.x_next[static_cast<std::size_t>(i)])] += 1;
        cell.total += 1;
      }
    }
  }
  return model;
}

std::vector<ConvergenceRow> convergence_experiment(const FactoredCdp& cdp,
                                                   const std::vector<Policy>& policies,
                                                   const ConvergenceSpec& spec,
                                                   std::uint64_t base_seed) {
  cdp.validate();
  if (policies.empty()) throw InvalidInput("convergence_experiment: no policies");
  if (spec.sample_grid.empty() || spec.seeds.empty())
    throw InvalidInput("convergence_experiment: empty sample grid or seed list");
  const CdpShape shape = cdp.shape();
  const AbstractionPhi phi = parent_abstraction(cdp);
  const double truth = cdp.transition_prob(spec.query.x, spec.query.a, spec.query.x_next);
  const double uniform = 1.0 / static_cast<double>(shape.state_count());

  std::vector<ConvergenceRow> rows;
  for (std::size_t e = 0; e < policies.size(); ++e) {
    for (std::size_t gi = 0; gi < spec.sample_grid.size(); ++gi) {
      const std::int64_t n = spec.sample_grid[gi];
      if (n <= 0) throw InvalidInput("convergence_experiment: sample sizes must be positive");
      for (std::uint64_t seed : spec.seeds) {
        // Fresh draw per cell so the sweep shows estimator variance, not a
        // shared-prefix artifact.
        const std::uint64_t stream =
            sub_seed(sub_seed(base_seed, seed), (static_cast<std::uint64_t>(e) << 32) | gi);
        EnvironmentDataset env = collect_n_records(cdp, policies[e], n, spec.horizon, stream,
                                                    static_cast<int>(e));
        std::vector<EnvironmentDataset> pack{std::move(env)};
        const EstimatedModel m_mle = estimate_mle(pack, shape);
        const EstimatedModel m_inv = estimate_invariant(pack, shape, phi);
        for (const EstimatedModel* m : {&m_mle, &m_inv}) {
          ConvergenceRow row;
          row.env_id = static_cast<int>(e);
          row.n = n;
          row.estimator = m->kind == EstimatorKind::kMle ? "mle" : "invariant";
          row.seed = seed;
          row.truth = truth;
          auto est = m->transition_prob(spec.query.x, spec.query.a, spec.query.x_next);
          row.nodata = !est.has_value();
          row.estimate = est.value_or(uniform);
          rows.push_back(std::move(row));
        }
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const ConvergenceRow& a, const ConvergenceRow& b) {
    return std::tie(a.env_id, a.n, a.estimator, a.seed) <
           std::tie(b.env_id, b.n, b.estimator, b.seed);
  });
  return rows;
}

}  // namespace milab
