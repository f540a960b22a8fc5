#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "milab/errors.hpp"
#include "milab/planning.hpp"
#include "milab/sampling.hpp"
#include "support/oracles.hpp"

using namespace milab;

namespace {

SynthSpec small_spec(int d, std::vector<int> doms, int actions) {
  SynthSpec spec;
  spec.d = d;
  spec.domain_sizes = std::move(doms);
  spec.action_count = actions;
  spec.max_parents = 2;
  spec.gamma = 0.9;
  return spec;
}

double sup_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Deterministic two-state flip: 0 -> 1 -> 0 -> ... under the only action.
FactoredCdp flip_cdp(double gamma) {
  FactoredCdp cdp;
  cdp.d = 1;
  cdp.domain_sizes = {2};
  cdp.action_count = 1;
  cdp.gamma = gamma;
  cdp.parents = {{0}};
  cdp.factors = {{0.0, 1.0, 1.0, 0.0}};
  cdp.reward = {1.0, 0.0};
  cdp.mu0 = {1.0, 0.0};
  cdp.validate();
  return cdp;
}

}  // namespace

TEST_CASE("qtable value and greedy tie-breaking") {
  QTable q;
  q.states = 2;
  q.actions = 3;
  q.q = {0.3, 0.7, 0.7, 0.5, 0.5, 0.1};
  CHECK(q.value(0) == 0.7);
  CHECK(q.greedy(0) == 1);  // tie between actions 1 and 2 goes to the lower index
  CHECK(q.greedy(1) == 0);  // tie between actions 0 and 1
  const Policy pi = q.greedy_policy();
  CHECK(pi.row(0)[1] == 1.0);
  CHECK(pi.row(0)[2] == 0.0);
  CHECK(pi.row(1)[0] == 1.0);
}

TEST_CASE("value iteration approaches the reward table as gamma vanishes") {
  SynthSpec spec = small_spec(2, {3, 2}, 2);
  spec.gamma = 1e-6;
  const FactoredCdp cdp = synth_random_cdp(spec, 3);
  const ValueIterationResult vi = value_iteration(cdp, 1e-12);
  for (std::int64_t x = 0; x < cdp.state_count(); ++x)
    for (int a = 0; a < cdp.action_count; ++a)
      CHECK(std::abs(vi.q.at(x, a) - cdp.reward_at(x, a)) < 2e-6);
}

TEST_CASE("constant rewards give the closed-form fixed point") {
  SynthSpec spec = small_spec(2, {2, 3}, 2);
  spec.gamma = 0.8;
  FactoredCdp cdp = synth_random_cdp(spec, 9);
  cdp.reward.assign(cdp.reward.size(), 0.5);
  const ValueIterationResult vi = value_iteration(cdp, 1e-11);
  for (double v : vi.q.q) CHECK(v == doctest::Approx(0.5 / (1 - 0.8)).epsilon(1e-9));
}

TEST_CASE("value iteration matches exhaustive policy enumeration") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const SynthSpec spec = small_spec(2, {2, 3}, seed % 2 == 0 ? 2 : 3);
    const FactoredCdp cdp = synth_random_cdp(spec, seed);
    const std::vector<double> want = oracles::optimal_q_by_enumeration(oracles::densify(cdp));
    const ValueIterationResult vi = value_iteration(cdp, 1e-10);
    CAPTURE(seed);
    CHECK(sup_gap(vi.q.q, want) <= 2e-9);
    // The stopping rule promises sup-norm closeness to Q*, residual reported.
    CHECK(vi.residual <= 1e-10 * (1 - cdp.gamma) / cdp.gamma);
    CHECK(vi.iterations > 0);
  }
}

TEST_CASE("keyed and dense value iteration agree") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(3, {3, 2, 3}, 2), 17);
  const ValueIterationResult fast = value_iteration(cdp, 1e-10);
  const ValueIterationResult slow = value_iteration_serial(cdp, 1e-10);
  CHECK(sup_gap(fast.q.q, slow.q.q) <= 1e-8);
}

TEST_CASE("expected_next_value contracts to the brute-force expectation") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(3, {3, 2, 3}, 2), 23);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(cdp.state_count()));
  for (double& x : v) x = unit(rng);

  const auto rows = [&cdp](int i, std::int64_t key, int a) { return cdp.factor_row(i, key, a); };
  for (int a = 0; a < cdp.action_count; ++a) {
    std::vector<int> union_set;
    const std::vector<double> table =
        expected_next_value(cdp.shape(), cdp.parents, rows, v, a, union_set);
    for (std::int64_t s = 0; s < cdp.state_count(); ++s) {
      const StateVector x = cdp.unflatten(s);
      const std::vector<double> row = oracles::dense_row(cdp, x, a);
      double want = 0.0;
      for (std::size_t y = 0; y < row.size(); ++y) want += row[y] * v[y];
      const std::int64_t key = key_over(union_set, x, cdp.domain_sizes);
      CHECK(std::abs(table[static_cast<std::size_t>(key)] - want) <= 1e-12);
    }
    // Serial contraction takes the same path without threads.
    std::vector<int> union_serial;
    const std::vector<double> serial = expected_next_value(cdp.shape(), cdp.parents, rows, v, a,
                                                           union_serial, kDefaultStateCap, false);
    CHECK(union_serial == union_set);
    CHECK(serial == table);
  }
}

TEST_CASE("block weights describe normalized in-block distributions") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(3, {2, 3, 2}, 2), 41);
  AbstractionPhi phi;
  phi.index_sets = {{0}, {}, {0}};  // joint set {0}; variables 1, 2 are free
  for (const BlockWeights& w :
       {BlockWeights::uniform(cdp.shape(), phi), BlockWeights::random(cdp.shape(), phi, 8)}) {
    CHECK_NOTHROW(w.validate());
    CHECK(w.joint_set == std::vector<int>{0});
    CHECK(w.free_set == std::vector<int>{1, 2});
    for (std::int64_t s = 0; s < w.abstract_count; ++s) {
      double mass = 0.0;
      for (std::int64_t x = 0; x < cdp.state_count(); ++x) {
        const StateVector xv = cdp.unflatten(x);
        if (key_over(w.joint_set, xv, cdp.domain_sizes) != s) continue;
        const double wx = w.weight_of(s, xv);
        CHECK(wx >= 0.0);
        mass += wx;
      }
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("abstract mdp under the identity abstraction is the dense model") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 2), 29);
  AbstractionPhi identity;
  identity.index_sets = {{0, 1}, {0, 1}};
  const AbstractMdp mdp =
      build_abstract_mdp(cdp, identity, BlockWeights::uniform(cdp.shape(), identity));
  CHECK(mdp.abstract_count == cdp.state_count());
  for (std::int64_t x = 0; x < cdp.state_count(); ++x) {
    const StateVector xv = cdp.unflatten(x);
    for (int a = 0; a < cdp.action_count; ++a) {
      const std::vector<double> want = oracles::dense_row(cdp, xv, a);
      const auto got = mdp.row(x, a);
      for (std::size_t y = 0; y < want.size(); ++y) CHECK(std::abs(got[y] - want[y]) <= 1e-12);
      CHECK(mdp.r[static_cast<std::size_t>(x * cdp.action_count + a)] ==
            doctest::Approx(cdp.reward_at(x, a)).epsilon(1e-12));
    }
  }

  // Its optimum therefore matches the concrete optimum.
  const ValueIterationResult abs_vi = value_iteration(mdp, 1e-10);
  const ValueIterationResult vi = value_iteration(cdp, 1e-10);
  CHECK(sup_gap(abs_vi.q.q, vi.q.q) <= 2e-9);
}

TEST_CASE("abstract value iteration parallel and serial are bitwise equal") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(3, {3, 3, 2}, 3), 53);
  AbstractionPhi phi;
  phi.index_sets = {{0, 1}, {1}, {1, 2}};
  const AbstractMdp mdp = build_abstract_mdp(cdp, phi, BlockWeights::random(cdp.shape(), phi, 4));
  const ValueIterationResult a = value_iteration(mdp, 1e-10);
  const ValueIterationResult b = value_iteration_serial(mdp, 1e-10);
  CHECK(a.iterations == b.iterations);
  CHECK(a.q.q == b.q.q);
}

TEST_CASE("lift_q tabulates abstract values over concrete states") {
  const CdpShape shape{3, {2, 3, 2}, 2};
  const std::vector<int> joint{0, 2};
  QTable abs_q;
  abs_q.states = 4;
  abs_q.actions = 2;
  abs_q.q = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const QTable lifted = lift_q(abs_q, joint, shape);
  CHECK(lifted.states == shape.state_count());
  for (std::int64_t x = 0; x < shape.state_count(); ++x) {
    const StateVector xv = shape.unflatten(x);
    const std::int64_t s = abstract_state_of(shape, joint, xv);
    for (int a = 0; a < 2; ++a) CHECK(lifted.at(x, a) == abs_q.at(s, a));
  }
}

TEST_CASE("policy evaluation agrees with the exact linear solve") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 3), 61);
  const oracles::DenseMdp dense = oracles::densify(cdp);
  // Deterministic policy x -> x % actions, expressed as rows.
  Policy pi;
  pi.action_count = cdp.action_count;
  pi.probs.assign(static_cast<std::size_t>(cdp.state_count() * cdp.action_count), 0.0);
  std::vector<int> choice(static_cast<std::size_t>(cdp.state_count()));
  for (std::int64_t x = 0; x < cdp.state_count(); ++x) {
    choice[static_cast<std::size_t>(x)] = static_cast<int>(x % cdp.action_count);
    pi.probs[static_cast<std::size_t>(x * cdp.action_count + choice[static_cast<std::size_t>(x)])] = 1.0;
  }
  const std::vector<double> v_exact = oracles::policy_value_exact(dense, choice);

  const QTable dense_q = policy_evaluation(cdp, pi, 1e-11);           // direct solve path
  const QTable iter_q = policy_evaluation(cdp, pi, 1e-11, /*dense_cap=*/1);  // iterative path
  for (std::int64_t x = 0; x < cdp.state_count(); ++x) {
    const int a = choice[static_cast<std::size_t>(x)];
    CHECK(std::abs(dense_q.at(x, a) - v_exact[static_cast<std::size_t>(x)]) <= 1e-8);
    CHECK(std::abs(iter_q.at(x, a) - v_exact[static_cast<std::size_t>(x)]) <= 1e-8);
  }
}

TEST_CASE("visitation of the deterministic flip chain is the geometric split") {
  const FactoredCdp cdp = flip_cdp(0.5);
  const Policy pi = Policy::uniform(2, 1);
  const std::vector<double> rho = state_visitation(cdp, pi);
  // Even times at state 0: rho(0) = (1 - g) / (1 - g^2) = 1 / (1 + g).
  CHECK(rho[0] == doctest::Approx(2.0 / 3).epsilon(1e-10));
  CHECK(rho[1] == doctest::Approx(1.0 / 3).epsilon(1e-10));

  const std::vector<double> nu = discounted_visitation(cdp, pi);
  CHECK(nu[0] == doctest::Approx(2.0 / 3).epsilon(1e-10));
  CHECK(nu[1] == doctest::Approx(1.0 / 3).epsilon(1e-10));
}

TEST_CASE("visitation matches a Monte Carlo rollout oracle") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 2), 71);
  Policy pi = Policy::from_row(cdp.state_count(), {0.3, 0.7});
  const std::vector<double> rho = state_visitation(cdp, pi);
  const std::vector<double> mc = oracles::mc_visitation(cdp, pi, 100000, 12345);
  CHECK(oracles::total_variation(rho, mc) <= 0.01);

  double mass = 0.0;
  for (double p : rho) {
    CHECK(p >= -1e-12);
    mass += p;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("visitation collapses to mu0 as gamma vanishes") {
  SynthSpec spec = small_spec(2, {2, 2}, 2);
  spec.gamma = 1e-9;
  const FactoredCdp cdp = synth_random_cdp(spec, 83);
  const std::vector<double> rho = state_visitation(cdp, Policy::uniform(cdp.state_count(), 2));
  for (std::size_t x = 0; x < rho.size(); ++x)
    CHECK(std::abs(rho[x] - cdp.mu0[x]) <= 1e-8);
}

TEST_CASE("discounted visitation factors through the policy") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 3), 97);
  const Policy pi = Policy::from_row(cdp.state_count(), {0.5, 0.2, 0.3});
  const std::vector<double> rho = state_visitation(cdp, pi);
  const std::vector<double> nu = discounted_visitation(cdp, pi);
  double mass = 0.0;
  for (std::int64_t x = 0; x < cdp.state_count(); ++x)
    for (int a = 0; a < 3; ++a) {
      const double want = rho[static_cast<std::size_t>(x)] * pi.row(x)[a];
      CHECK(std::abs(nu[static_cast<std::size_t>(x * 3 + a)] - want) <= 1e-12);
      mass += nu[static_cast<std::size_t>(x * 3 + a)];
    }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("concentrability over hand vectors") {
  CHECK(concentrability({0.2, 0.8}, {0.5, 0.5}) == doctest::Approx(1.6).epsilon(1e-14));
  CHECK(concentrability({0.0, 1.0}, {0.5, 0.5}) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(concentrability({0.0, 1.0}, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(concentrability({0.5, 0.5}, {0.0, 1.0}), Unbounded);
}

TEST_CASE("weighted_l2 over hand vectors") {
  CHECK(weighted_l2({1.0, 2.0}, {0.25, 0.75}) ==
        doctest::Approx(std::sqrt(0.25 + 3.0)).epsilon(1e-14));
  CHECK(weighted_l2({0.0, 0.0}, {0.5, 0.5}) == 0.0);
}

TEST_CASE("model error report under exact abstractions") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(3, {2, 3, 2}, 2), 111);

  AbstractionPhi identity;
  identity.index_sets = {{0, 1, 2}, {0, 1, 2}, {0, 1, 2}};
  const ModelErrorBoundReport exact = verify_model_error_bound(
      cdp, identity, BlockWeights::uniform(cdp.shape(), identity));
  CHECK(exact.max_lhs <= 1e-12);  // the abstract model is the model
  CHECK(exact.eps_sum == 0.0);
  CHECK(exact.bound_holds);
  CHECK(exact.routes_agree);

  const AbstractionPhi parents = parent_abstraction(cdp);
  const ModelErrorBoundReport par = verify_model_error_bound(
      cdp, parents, BlockWeights::random(cdp.shape(), parents, 5));
  CHECK(par.eps_sum == 0.0);  // parent abstraction is invariant
  CHECK(par.max_lhs <= 1e-9);
  CHECK(par.bound_holds);
  CHECK(par.routes_agree);
  CHECK(par.states == cdp.state_count());

  // A lossy abstraction keeps the bound and the route agreement.
  AbstractionPhi coarse;
  coarse.index_sets = {{}, {1}, {}};
  const ModelErrorBoundReport lossy = verify_model_error_bound(
      cdp, coarse, BlockWeights::random(cdp.shape(), coarse, 6));
  CHECK(lossy.bound_holds);
  CHECK(lossy.routes_agree);
  CHECK(lossy.max_lhs <= lossy.eps_sum + 1e-9);
  CHECK(lossy.min_slack == doctest::Approx(lossy.eps_sum - lossy.max_lhs).epsilon(1e-12));
  CHECK(lossy.max_route_gap <= 1e-9);
}

TEST_CASE("value loss report internal consistency and identity case") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 3}, 2), 131);
  const Policy pi = Policy::from_row(cdp.state_count(), {0.6, 0.4});

  AbstractionPhi identity;
  identity.index_sets = {{0, 1}, {0, 1}};
  const ValueLossBoundReport exact = verify_value_loss_bound(
      cdp, identity, BlockWeights::uniform(cdp.shape(), identity), pi);
  // Lifting the abstract optimum of the identity abstraction recovers Q*.
  CHECK(exact.bound1_lhs <= 5e-9);
  CHECK(exact.holds);

  AbstractionPhi coarse;
  coarse.index_sets = {{0}, {}};
  const ValueLossBoundReport lossy = verify_value_loss_bound(
      cdp, coarse, BlockWeights::uniform(cdp.shape(), coarse), pi);
  CHECK(lossy.holds);
  CHECK(lossy.slack1 == doctest::Approx(lossy.bound1_rhs - lossy.bound1_lhs).epsilon(1e-12));
  CHECK(lossy.slack2 == doctest::Approx(lossy.bound2_rhs - lossy.bound2_lhs).epsilon(1e-12));
  CHECK(lossy.c >= 1.0);  // occupancy against the uniform reference
  CHECK(lossy.bound1_rhs ==
        doctest::Approx(std::sqrt(lossy.c) / (1 - cdp.gamma) * lossy.bound2_lhs).epsilon(1e-12));
}

TEST_CASE("certainty equivalence with an exact count model closes the gap") {
  // Dyadic rows let integer counts reproduce the model with no rounding: 256
  // pseudo-observations per (x, a) make the frequency estimate exact.
  FactoredCdp cdp;
  cdp.d = 2;
  cdp.domain_sizes = {2, 2};
  cdp.action_count = 2;
  cdp.gamma = 0.9;
  cdp.parents = {{0}, {0, 1}};
  cdp.factors.resize(2);
  cdp.factors[0] = {12.0 / 16, 4.0 / 16, 8.0 / 16, 8.0 / 16,
                    4.0 / 16, 12.0 / 16, 6.0 / 16, 10.0 / 16};
  cdp.factors[1] = {10.0 / 16, 6.0 / 16, 2.0 / 16, 14.0 / 16,
                    8.0 / 16, 8.0 / 16, 15.0 / 16, 1.0 / 16,
                    4.0 / 16, 12.0 / 16, 9.0 / 16, 7.0 / 16,
                    16.0 / 16, 0.0 / 16, 5.0 / 16, 11.0 / 16};
  cdp.reward = {0.2, 0.8, 0.5, 0.1, 0.9, 0.3, 0.4, 0.6};
  cdp.mu0 = {0.25, 0.25, 0.25, 0.25};
  cdp.validate();

  EstimatedModel model;
  model.kind = EstimatorKind::kMle;
  model.shape = cdp.shape();
  for (std::int64_t x = 0; x < cdp.state_count(); ++x) {
    const StateVector xv = cdp.unflatten(x);
    for (int a = 0; a < cdp.action_count; ++a) {
      EstimatedModel::SparseCounts counts;
      const std::vector<double> row = oracles::dense_row(cdp, xv, a);
      for (std::int64_t y = 0; y < cdp.state_count(); ++y) {
        const auto hits = static_cast<std::int64_t>(std::llround(row[static_cast<std::size_t>(y)] * 256));
        if (hits > 0) counts.next.push_back({y, hits});
      }
      counts.total = 256;
      model.mle[x * cdp.action_count + a] = std::move(counts);
    }
  }

  const CePlanReport plan = certainty_equivalence_plan(cdp, model, 1e-10);
  CHECK(plan.fallback_pairs == 0);
  CHECK(plan.total_pairs == cdp.state_count() * cdp.action_count);
  CHECK(std::abs(plan.gap) <= 1e-7);
  CHECK(plan.v_star == doctest::Approx(plan.v_pi).epsilon(1e-7));
}

TEST_CASE("planning with an empty model falls back to uniform everywhere") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {2, 3}, 2), 151);
  EstimatedModel empty;
  empty.kind = EstimatorKind::kMle;
  empty.shape = cdp.shape();
  const CePlanReport plan = certainty_equivalence_plan(cdp, empty, 1e-9);
  CHECK(plan.fallback_pairs == plan.total_pairs);
  CHECK(plan.total_pairs == cdp.state_count() * cdp.action_count);
  CHECK(plan.gap >= -1e-9);  // the greedy policy cannot beat the optimum
  CHECK(plan.v_star >= plan.v_pi - 1e-9);

  std::int64_t fallback = 0;
  const ValueIterationResult vi = value_iteration(cdp, empty, 1e-9, kDefaultStateCap, &fallback);
  CHECK(fallback == plan.total_pairs);
  CHECK(vi.q.q.size() == static_cast<std::size_t>(plan.total_pairs));
}

TEST_CASE("bellman operator is a gamma contraction") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 2), 171);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(-5.0, 5.0);
  const std::size_t cells = static_cast<std::size_t>(cdp.state_count() * cdp.action_count);
  for (int pair = 0; pair < 20; ++pair) {
    QTable q1, q2;
    q1.states = q2.states = cdp.state_count();
    q1.actions = q2.actions = cdp.action_count;
    q1.q.resize(cells);
    q2.q.resize(cells);
    for (std::size_t k = 0; k < cells; ++k) {
      q1.q[k] = unit(rng);
      q2.q[k] = unit(rng);
    }
    const std::vector<double> t1 = bellman_apply(cdp, q1);
    const std::vector<double> t2 = bellman_apply(cdp, q2);
    CHECK(sup_gap(t1, t2) <= cdp.gamma * sup_gap(q1.q, q2.q) + 1e-12);
  }

  // The optimum is the operator's fixed point.
  const ValueIterationResult vi = value_iteration(cdp, 1e-10);
  const std::vector<double> tq = bellman_apply(cdp, vi.q);
  CHECK(sup_gap(tq, vi.q.q) <= 1e-8);
}

TEST_CASE("enumeration guards in planning") {
  const FactoredCdp cdp = synth_random_cdp(small_spec(2, {3, 2}, 2), 191);
  CHECK_THROWS_AS(value_iteration(cdp, 1e-9, /*cap=*/4), TooLarge);
  CHECK_THROWS_AS(value_iteration_serial(cdp, 1e-9, /*cap=*/4), TooLarge);
  CHECK_THROWS_AS(state_visitation(cdp, Policy::uniform(6, 2), /*dense_cap=*/4), TooLarge);
  CHECK_THROWS_AS(value_iteration(cdp, 0.0), InvalidInput);
}
