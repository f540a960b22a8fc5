#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "milab/abstraction.hpp"
#include "milab/estimation.hpp"
#include "milab/factored_cdp.hpp"

namespace milab {

// Q(x, a) laid out x * actions + a.
struct QTable {
  std::int64_t states = 0;
  int actions = 1;
  std::vector<double> q;

  double at(std::int64_t x, int a) const { return q[x * actions + a]; }
  double value(std::int64_t x) const;
  // Argmax with ties broken toward the lowest action index.
  int greedy(std::int64_t x) const;
  Policy greedy_policy() const;
};

struct ValueIterationResult {
  QTable q;
  int iterations = 0;
  double residual = 0.0;  // sup-norm change of the last sweep
};

// Weights that turn a joint abstraction into an abstract model. For each
// abstract state (an assignment of the coordinates in the joint index set)
// every free coordinate carries its own distribution; the implied weight of
// a concrete state in the preimage is the product over free coordinates.
// Coordinates in the joint set are forced, so they carry no distribution.
struct BlockWeights {
  std::vector<int> joint_set;  // sorted union of the abstraction's index sets
  std::vector<int> free_set;   // complement, sorted
  std::vector<int> domain_sizes;
  std::int64_t abstract_count = 0;
  // Per abstract state: concatenated rows, one per free coordinate in
  // free_set order. offsets[j] is the start of free_set[j]'s row.
  std::vector<std::int64_t> offsets;
  std::int64_t stride = 0;  // row block length per abstract state
  std::vector<double> w;

  static BlockWeights uniform(const CdpShape& shape, const AbstractionPhi& phi);
  static BlockWeights random(const CdpShape& shape, const AbstractionPhi& phi,
                             std::uint64_t seed);

  std::span<const double> row(std::int64_t abstract_state, int free_pos) const;
  // Product of the free-coordinate weights at x's values; x must project to
  // the given abstract state.
  double weight_of(std::int64_t abstract_state, const StateVector& x) const;
  void validate() const;
};

// Dense MDP over the abstract states induced by the joint projection of an
// abstraction. Transitions average the lifted rows of the preimage under the
// block weights; rewards average the same way.
struct AbstractMdp {
  AbstractionPhi phi;
  std::vector<int> joint_set;
  std::int64_t abstract_count = 0;
  int action_count = 1;
  double gamma = 0.9;
  double r_max = 1.0;
  std::vector<double> p;  // (s * action_count + a) * abstract_count + s'
  std::vector<double> r;  // s * action_count + a

  std::span<const double> row(std::int64_t s, int a) const {
    return {p.data() + (s * action_count + a) * abstract_count,
            static_cast<std::size_t>(abstract_count)};
  }
};

AbstractMdp build_abstract_mdp(const FactoredCdp& cdp, const AbstractionPhi& phi,
                               const BlockWeights& weights,
                               std::int64_t cap = kDefaultStateCap);

// Abstract state of x under the joint projection: mixed-radix key over the
// joint index set.
std::int64_t abstract_state_of(const CdpShape& shape, const std::vector<int>& joint_set,
                               const StateVector& x);

// Expected next value per parent-key assignment for one action:
//   out[k] = sum_{x'} prod_i rows(i, k_i, a)[x'_i] * v[x']
// computed by contracting next-state variables one at a time, so the cost is
// driven by the sizes of the running key unions instead of |X|^2. `index_sets`
// gives the conditioning set of each variable; `rows(i, key, a)` must return
// the i-th next-variable distribution for that conditioning assignment.
// The returned table is indexed by the mixed-radix key over the union of all
// index sets; `union_out` receives that sorted union.
using FactorRowFn = std::function<std::span<const double>(int i, std::int64_t key, int a)>;
std::vector<double> expected_next_value(const CdpShape& shape,
                                        const std::vector<std::vector<int>>& index_sets,
                                        const FactorRowFn& rows, const std::vector<double>& v,
                                        int a, std::vector<int>& union_out,
                                        std::int64_t cap = kDefaultStateCap, bool parallel = true);

// Optimal-value iteration on the exact factored model, stopping once the
// sup-norm sweep change is at most tol * (1 - gamma) / gamma (which puts the
// returned Q within tol of Q* in sup norm). The default path contracts factor
// tables and threads per-state work; the serial variant composes dense rows
// one state at a time and is the reference the tests compare against.
ValueIterationResult value_iteration(const FactoredCdp& cdp, double tol = 1e-9,
                                     std::int64_t cap = kDefaultStateCap);
ValueIterationResult value_iteration_serial(const FactoredCdp& cdp, double tol = 1e-9,
                                            std::int64_t cap = kDefaultStateCap);

ValueIterationResult value_iteration(const AbstractMdp& mdp, double tol = 1e-9);
ValueIterationResult value_iteration_serial(const AbstractMdp& mdp, double tol = 1e-9);

// Value iteration under the certainty-equivalence model: transitions come
// from the estimates, rewards and gamma from the true process. State-action
// pairs the estimate has no data for fall back to the uniform next-state
// distribution (whose expected value is just the mean of v, so the sparse
// backend stays O(1) per fallback row). `fallback_pairs_out`, if non-null,
// receives the number of (x, a) pairs that planning resolved by fallback.
ValueIterationResult value_iteration(const FactoredCdp& true_cdp, const EstimatedModel& model,
                                     double tol = 1e-9, std::int64_t cap = kDefaultStateCap,
                                     std::int64_t* fallback_pairs_out = nullptr);

// Q(phi(x), a) tabulated back over concrete states.
QTable lift_q(const QTable& abstract_q, const std::vector<int>& joint_set,
              const CdpShape& shape);

// One application of the optimality operator to q under the exact model:
//   (Tq)(x, a) = R(x, a) + gamma * E[max_a' q(x', a')].
std::vector<double> bellman_apply(const FactoredCdp& cdp, const QTable& q,
                                  std::int64_t cap = kDefaultStateCap);

// Fixed-point Q^pi of the policy operator, returned with a guaranteed
// sup-norm Bellman residual of at most residual_tol. States up to dense_cap
// use a direct linear solve; larger models iterate the policy operator.
QTable policy_evaluation(const FactoredCdp& cdp, const Policy& pi,
                         double residual_tol = 1e-10, std::int64_t dense_cap = 2048);

// Normalized discounted state visitation of pi from mu0:
//   rho(x) = (1 - gamma) * sum_t gamma^t Pr[x_t = x],
// by a dense transposed linear solve (states capped at dense_cap).
std::vector<double> state_visitation(const FactoredCdp& cdp, const Policy& pi,
                                     std::int64_t dense_cap = 2048);

// Discounted state-action occupancy nu(x, a) = rho(x) * pi(a | x), laid out
// x * action_count + a. Sums to 1 within 1e-10.
std::vector<double> discounted_visitation(const FactoredCdp& cdp, const Policy& pi,
                                          std::int64_t dense_cap = 2048);

// max_i nu[i] / mu[i]; Unbounded if nu puts mass where mu has none.
double concentrability(const std::vector<double>& nu, const std::vector<double>& mu);

// sqrt(sum_i weight[i] * f[i]^2).
double weighted_l2(const std::vector<double>& f, const std::vector<double>& weight);

// Model-error check: for every (x, a), the L1 gap between the abstract row at
// phi(x) and the pushforward of the concrete row must stay within the sum of
// per-variable invariance defects. The same gap is recomputed through an
// exact per-dimension telescoping decomposition as an independent route; the
// two must agree to near machine precision.
struct ModelErrorBoundReport {
  std::int64_t states = 0;
  int actions = 1;
  std::vector<double> lhs;     // L1 gap per (x, a), laid out x * actions + a
  double eps_sum = 0.0;        // rhs: sum of per-variable model defects
  double max_lhs = 0.0;        // worst L1 gap over (x, a)
  double min_slack = 0.0;      // eps_sum - max_lhs
  double max_route_gap = 0.0;  // worst |direct - telescoped| L1 disagreement
  bool bound_holds = false;    // max_lhs <= eps_sum + 1e-9
  bool routes_agree = false;   // max_route_gap <= 1e-9
};
ModelErrorBoundReport verify_model_error_bound(const FactoredCdp& cdp,
                                               const AbstractionPhi& phi,
                                               const BlockWeights& weights,
                                               std::int64_t cap = kDefaultStateCap);

// Value-loss check for the lifted abstract optimum. Two inequalities:
//   |[Q*_abs]_M - Q*_M|_{2,nu} <= sqrt(C) / (1 - gamma) * |lifted - T lifted|_{2,mu}
//   |lifted - T lifted|_{2,mu} <= eps_r + gamma * eps_p_sum * r_max / (2 (1 - gamma))
// with mu uniform over pairs, nu the occupancy of the supplied policy, and
// C = max nu / mu. The second line centers values at r_max / (2 (1 - gamma)),
// which is why rewards are required to be nonnegative.
struct ValueLossBoundReport {
  double c = 0.0;           // concentrability of (nu, mu)
  double bound1_lhs = 0.0;  // |lifted - Q*|_{2,nu}
  double bound1_rhs = 0.0;  // sqrt(C)/(1-gamma) * |lifted - T lifted|_{2,mu}
  double slack1 = 0.0;      // rhs - lhs
  double bound2_lhs = 0.0;  // |lifted - T lifted|_{2,mu}
  double bound2_rhs = 0.0;  // eps_r + gamma * eps_p_sum * r_max / (2 (1 - gamma))
  double slack2 = 0.0;
  bool holds = false;  // both slacks >= -1e-9
};
ValueLossBoundReport verify_value_loss_bound(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                             const BlockWeights& weights,
                                             const std::vector<double>& mu,
                                             const std::vector<double>& nu,
                                             double vi_tol = 1e-9,
                                             std::int64_t cap = kDefaultStateCap);
// Convenience form: mu uniform over state-action pairs, nu the discounted
// occupancy of pi.
ValueLossBoundReport verify_value_loss_bound(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                             const BlockWeights& weights, const Policy& pi,
                                             double vi_tol = 1e-9,
                                             std::int64_t cap = kDefaultStateCap);

// Certainty-equivalence planning: value-iterate the estimated model, act
// greedily, and score the greedy policy on the true process.
struct CePlanReport {
  Policy policy;
  double v_star = 0.0;  // optimal value at mu0
  double v_pi = 0.0;    // greedy policy's value at mu0
  double gap = 0.0;     // v_star - v_pi
  std::int64_t fallback_pairs = 0;
  std::int64_t total_pairs = 0;
};
CePlanReport certainty_equivalence_plan(const FactoredCdp& true_cdp, const EstimatedModel& model,
                                        double vi_tol = 1e-9,
                                        std::int64_t cap = kDefaultStateCap);

}  // namespace milab
