#include "milab/verify.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "milab/sampling.hpp"

namespace milab {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SynthSpec random_shape(Rng& rng, int max_d, int max_actions, int max_parents_cap) {
  SynthSpec spec;
  spec.d = std::uniform_int_distribution<int>(1, max_d)(rng);
  spec.domain_sizes.resize(static_cast<std::size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i)
    spec.domain_sizes[static_cast<std::size_t>(i)] =
        std::uniform_int_distribution<int>(2, 4)(rng);
  spec.action_count = std::uniform_int_distribution<int>(1, max_actions)(rng);
  spec.max_parents = std::min(spec.d, max_parents_cap);
  return spec;
}

AbstractionPhi random_abstraction(int d, Rng& rng) {
  AbstractionPhi phi;
  phi.index_sets.resize(static_cast<std::size_t>(d));
  std::bernoulli_distribution keep(0.5);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (keep(rng)) phi.index_sets[static_cast<std::size_t>(i)].push_back(j);
  return phi;
}

Policy random_policy(std::int64_t states, int actions, Rng& rng) {
  Policy pi;
  pi.action_count = actions;
  pi.probs.resize(static_cast<std::size_t>(states * actions));
  std::exponential_distribution<double> exp1(1.0);
  for (std::int64_t x = 0; x < states; ++x) {
    double sum = 0.0;
    for (int a = 0; a < actions; ++a) {
      const double v = exp1(rng) + 1e-12;
      pi.probs[static_cast<std::size_t>(x * actions + a)] = v;
      sum += v;
    }
    for (int a = 0; a < actions; ++a) pi.probs[static_cast<std::size_t>(x * actions + a)] /= sum;
  }
  return pi;
}

}  // namespace

ParentInvarianceSweepReport parent_invariance_sweep(int count, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ParentInvarianceSweepReport rep;
  rep.count = count;
  int failures = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : failures)
  for (int k = 0; k < count; ++k) {
    Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k)));
    const SynthSpec spec = random_shape(rng, /*max_d=*/4, /*max_actions=*/3, /*max_parents_cap=*/4);
    const FactoredCdp cdp = synth_random_cdp(spec, sub_seed(seed, 1000000u + static_cast<std::uint64_t>(k)));
    const AbstractionPhi phi = parent_abstraction(cdp);
    const InvarianceCheck check = check_model_invariance(cdp, phi, 0.0);
    if (!check.invariant) ++failures;
  }
  rep.failures = failures;
  rep.seconds = seconds_since(t0);
  return rep;
}

ModelErrorSweepReport model_error_bound_sweep(int count, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelErrorSweepReport rep;
  rep.count = count;
  int violations = 0;
  int route_disagreements = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  double max_route_gap = 0.0;
#pragma omp parallel for schedule(dynamic) reduction(+ : violations, route_disagreements) \
    reduction(min : min_slack) reduction(max : max_route_gap)
  for (int k = 0; k < count; ++k) {
    Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k)));
    const SynthSpec spec = random_shape(rng, /*max_d=*/3, /*max_actions=*/3, /*max_parents_cap=*/3);
    const FactoredCdp cdp = synth_random_cdp(spec, sub_seed(seed, 2000000u + static_cast<std::uint64_t>(k)));
    const AbstractionPhi phi = random_abstraction(cdp.d, rng);
    const BlockWeights weights =
        BlockWeights::random(cdp.shape(), phi, sub_seed(seed, 3000000u + static_cast<std::uint64_t>(k)));
    const ModelErrorBoundReport r = verify_model_error_bound(cdp, phi, weights);
    if (!r.bound_holds) ++violations;
    if (!r.routes_agree) ++route_disagreements;
    min_slack = std::min(min_slack, r.min_slack);
    max_route_gap = std::max(max_route_gap, r.max_route_gap);
  }
  rep.violations = violations;
  rep.route_disagreements = route_disagreements;
  rep.min_slack = min_slack;
  rep.max_route_gap = max_route_gap;
  rep.seconds = seconds_since(t0);
  return rep;
}

ValueLossSweepReport value_loss_bound_sweep(int count, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ValueLossSweepReport rep;
  rep.count = count;
  int violations = 0;
  double min_slack1 = std::numeric_limits<double>::infinity();
  double min_slack2 = std::numeric_limits<double>::infinity();
#pragma omp parallel for schedule(dynamic) reduction(+ : violations) \
    reduction(min : min_slack1, min_slack2)
  for (int k = 0; k < count; ++k) {
    Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k)));
    SynthSpec spec = random_shape(rng, /*max_d=*/3, /*max_actions=*/3, /*max_parents_cap=*/3);
    spec.gamma = 0.7 + 0.25 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const FactoredCdp cdp = synth_random_cdp(spec, sub_seed(seed, 4000000u + static_cast<std::uint64_t>(k)));
    const AbstractionPhi phi = random_abstraction(cdp.d, rng);
    const BlockWeights weights =
        BlockWeights::random(cdp.shape(), phi, sub_seed(seed, 5000000u + static_cast<std::uint64_t>(k)));
    const Policy pi = random_policy(cdp.state_count(), cdp.action_count, rng);
    const ValueLossBoundReport r = verify_value_loss_bound(cdp, phi, weights, pi, 1e-9);
    if (r.slack1 < -1e-8 || r.slack2 < -1e-8) ++violations;
    min_slack1 = std::min(min_slack1, r.slack1);
    min_slack2 = std::min(min_slack2, r.slack2);
  }
  rep.violations = violations;
  rep.min_slack1 = min_slack1;
  rep.min_slack2 = min_slack2;
  rep.seconds = seconds_since(t0);
  return rep;
}

}  // namespace milab
