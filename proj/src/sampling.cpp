#include "milab/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace milab {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined word.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int sample_categorical(Rng& rng, std::span<const double> probs) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t v = 0; v + 1 < probs.size(); ++v) {
    acc += probs[v];
    if (u < acc) return static_cast<int>(v);
  }
  return static_cast<int>(probs.size()) - 1;
}

namespace {

StateVector draw_initial_state(const FactoredCdp& cdp, Rng& rng) {
  const std::int64_t idx = sample_categorical(rng, {cdp.mu0.data(), cdp.mu0.size()});
  return cdp.unflatten(idx);
}

StateVector step(const FactoredCdp& cdp, const StateVector& x, int a, Rng& rng) {
  StateVector next(cdp.d);
  for (int i = 0; i < cdp.d; ++i) next[i] = sample_categorical(rng, cdp.factor_row_for(i, x, a));
  return next;
}

}  // namespace

std::vector<TransitionRecord> sample_trajectory(const FactoredCdp& cdp, const Policy& policy,
                                                int horizon, std::uint64_t seed, int env_id) {
  if (horizon < 1) throw InvalidInput("horizon must be >= 1");
  Rng rng(seed);
  std::vector<TransitionRecord> out;
  out.reserve(horizon);
  StateVector x = draw_initial_state(cdp, rng);
  for (int t = 0; t < horizon; ++t) {
    const std::int64_t x_flat = cdp.flat_index(x);
    const int a = sample_categorical(rng, policy.row(x_flat));
    StateVector next = step(cdp, x, a, rng);
    out.push_back({env_id, t, x, a, next, cdp.reward_at(x_flat, a)});
    x = std::move(next);
  }
  return out;
}

std::vector<EnvironmentDataset> collect_environments(const FactoredCdp& cdp,
                                                     const std::vector<Policy>& policies,
                                                     int episodes_per_env, int horizon,
                                                     std::uint64_t seed) {
  if (policies.empty()) throw InvalidInput("need at least one policy");
  if (episodes_per_env < 1) throw InvalidInput("episodes_per_env must be >= 1");
  std::vector<EnvironmentDataset> out;
  out.reserve(policies.size());
  for (std::size_t e = 0; e < policies.size(); ++e) {
    EnvironmentDataset data;
    data.env_id = static_cast<int>(e);
    data.horizon = horizon;
    data.records.reserve(static_cast<std::size_t>(episodes_per_env) * horizon);
    for (int ep = 0; ep < episodes_per_env; ++ep) {
      auto episode = sample_trajectory(cdp, policies[e], horizon,
                                       sub_seed(seed, e * 1000003ULL + ep), data.env_id);
      data.records.insert(data.records.end(), episode.begin(), episode.end());
    }
    out.push_back(std::move(data));
  }
  return out;
}

EnvironmentDataset collect_n_records(const FactoredCdp& cdp, const Policy& policy, std::int64_t n,
                                     int horizon, std::uint64_t seed, int env_id) {
  if (n < 1) throw InvalidInput("need n >= 1 records");
  EnvironmentDataset data;
  data.env_id = env_id;
  data.horizon = horizon;
  data.records.reserve(n);
  for (std::int64_t ep = 0; static_cast<std::int64_t>(data.records.size()) < n; ++ep) {
    auto episode = sample_trajectory(cdp, policy, horizon, sub_seed(seed, ep), env_id);
    for (auto& rec : episode) {
      if (static_cast<std::int64_t>(data.records.size()) >= n) break;
      data.records.push_back(std::move(rec));
    }
  }
  return data;
}

FactoredCdp synth_random_cdp(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.d < 1) throw InvalidInput("synth: d must be >= 1");
  if (static_cast<int>(spec.domain_sizes.size()) != spec.d)
    throw InvalidInput("synth: domain_sizes length != d");
  if (spec.max_parents < 0 || spec.max_parents > spec.d)
    throw InvalidInput("synth: max_parents out of range");
  if (!(spec.dirichlet_alpha > 0.0)) throw InvalidInput("synth: dirichlet_alpha must be positive");

  Rng rng(sub_seed(seed, 0xc0ffee));
  FactoredCdp cdp;
  cdp.d = spec.d;
  cdp.domain_sizes = spec.domain_sizes;
  cdp.action_count = spec.action_count;
  cdp.gamma = spec.gamma;
  cdp.r_max = spec.r_max;

  std::uniform_int_distribution<int> size_dist(0, spec.max_parents);
  cdp.parents.resize(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    const int k = size_dist(rng);
    std::vector<int> all(spec.d);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(k);
    std::sort(all.begin(), all.end());
    cdp.parents[i] = std::move(all);
  }

  std::gamma_distribution<double> gamma_dist(spec.dirichlet_alpha, 1.0);
  auto dirichlet_row = [&](double* out, int len) {
    double sum = 0.0;
    for (int v = 0; v < len; ++v) {
      // gamma draws can underflow to 0 for small alpha; nudge off zero so
      // rows normalize and logs stay finite downstream.
      out[v] = std::max(gamma_dist(rng), 1e-300);
      sum += out[v];
    }
    for (int v = 0; v < len; ++v) out[v] /= sum;
  };

  cdp.factors.resize(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    const std::int64_t rows = cdp.key_count(i) * spec.action_count;
    cdp.factors[i].resize(rows * spec.domain_sizes[i]);
    for (std::int64_t r = 0; r < rows; ++r)
      dirichlet_row(cdp.factors[i].data() + r * spec.domain_sizes[i], spec.domain_sizes[i]);
  }

  const std::int64_t n = cdp.state_count();
  std::uniform_real_distribution<double> unif(0.0, spec.r_max);
  cdp.reward.resize(n * spec.action_count);
  for (auto& r : cdp.reward) r = unif(rng);
  cdp.mu0.resize(n);
  dirichlet_row(cdp.mu0.data(), static_cast<int>(n));

  cdp.validate();
  return cdp;
}

LinearChainInstance linear_chain_benchmark() {
  constexpr int kDom = 21;    // values -10..10, index = value + 10
  constexpr int kHalf = 10;   // |value| bound
  constexpr int kLevels = 3;  // actions double as additive noise-mean levels
  constexpr double kRho = 0.9;
  // binomial(4, 1/2) shifted to {-3..1}: mean -1, sd 1.
  constexpr int kNoiseMin = -3;
  constexpr double kNoisePmf[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

  LinearChainInstance inst;
  FactoredCdp& cdp = inst.cdp;
  cdp.d = 3;
  cdp.domain_sizes = {kDom, kDom, kDom};
  cdp.action_count = kLevels;
  cdp.gamma = 0.9;
  cdp.r_max = 1.0;
  cdp.parents = {{0}, {1}, {2}};

  // All three variables share the same per-variable kernel:
  // next = clamp(round(rho * value) + a + noise, -10, 10).
  std::vector<double> table(static_cast<std::size_t>(kDom) * kLevels * kDom, 0.0);
  for (int key = 0; key < kDom; ++key) {
    const int value = key - kHalf;
    for (int a = 0; a < kLevels; ++a) {
      double* row = table.data() + (static_cast<std::size_t>(key) * kLevels + a) * kDom;
      for (int n = 0; n < 5; ++n) {
        const double drifted = kRho * value + a + (kNoiseMin + n);
        const long next = std::lround(drifted);
        const int clamped = static_cast<int>(std::clamp<long>(next, -kHalf, kHalf));
        row[clamped + kHalf] += kNoisePmf[n];
      }
    }
  }
  cdp.factors = {table, table, table};

  const std::int64_t states = cdp.state_count();
  cdp.reward.resize(states * kLevels);
  for (std::int64_t s = 0; s < states; ++s) {
    const StateVector x = cdp.unflatten(s);
    const double spread = std::abs(x[0] - kHalf) + std::abs(x[1] - kHalf) + std::abs(x[2] - kHalf);
    for (int a = 0; a < kLevels; ++a) cdp.reward[s * kLevels + a] = 1.0 - spread / 30.0;
  }

  cdp.mu0.assign(states, 0.0);
  const StateVector center{kHalf, kHalf, kHalf};
  cdp.mu0[cdp.flat_index(center)] = 1.0;
  cdp.validate();

  // Environment e: mixture with weight 0.6 on level e, 0.2 on the others.
  for (int e = 0; e < kLevels; ++e) {
    std::vector<double> mix(kLevels, 0.2);
    mix[e] = 0.6;
    inst.policies.push_back(Policy::from_row(states, mix));
  }

  inst.horizon = 10;
  inst.query.x = center;
  inst.query.a = 0;
  inst.query.x_next = {kHalf - 1, kHalf, kHalf};
  double truth = 1.0;
  for (int i = 0; i < 3; ++i)
    truth *= cdp.factor_row_for(i, inst.query.x, inst.query.a)[inst.query.x_next[i]];
  inst.query.truth = truth;
  return inst;
}

}  // namespace milab
