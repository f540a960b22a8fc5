#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "milab/factored_cdp.hpp"

namespace milab {

// Per-variable state abstraction: variable i's abstract value is the tuple
// [x]_{index_sets[i]}. The joint abstract state is the tuple of all d
// projections, which only depends on x through union(index_sets).
struct AbstractionPhi {
  std::vector<std::vector<int>> index_sets;  // per variable, sorted unique

  void validate(int d) const;
  // Sorted union of all index sets.
  std::vector<int> joint_index_set() const;
};

// Mixed-radix key of [x]_S, first listed index most significant.
std::int64_t key_over(const std::vector<int>& indices, const StateVector& x,
                      const std::vector<int>& domain_sizes);

// The d projected tuples ([x]_{S_1}, ..., [x]_{S_d}).
std::vector<StateVector> project(const AbstractionPhi& phi, const StateVector& x);

// Abstraction keeping exactly the parent set of each variable.
AbstractionPhi parent_abstraction(const FactoredCdp& cdp);

// Next-step distribution of the joint abstract state, i.e. the row
// P(. | x, a) pushed through the joint projection. Because the preimage of a
// joint abstract value is a product set and the transition factorizes, this
// is the tensor product over j in union(index_sets) of the per-variable
// factor rows; returned indexed by key_over(joint set).
std::vector<double> lifted_row(const FactoredCdp& cdp, const std::vector<int>& joint_set,
                               const StateVector& x, int a);

struct InvarianceCounterexample {
  int variable = 0;
  StateVector x1, x2;
  int action = 0;
};

struct InvarianceCheck {
  bool invariant = true;
  std::optional<InvarianceCounterexample> counterexample;
};

// Merge-direction invariance check: for every variable i and action, states
// with equal projections [x]_{S_i} must have identical (within tol, sup-norm)
// next-value distributions for variable i. tol = 0 demands exact equality.
// The counterexample, when present, is the lexicographically first violation.
InvarianceCheck check_model_invariance(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                       double tol = 0.0, std::int64_t cap = kDefaultStateCap);
InvarianceCheck check_model_invariance_serial(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                              double tol = 0.0,
                                              std::int64_t cap = kDefaultStateCap);

// Reverse-direction diagnostic: looks for state pairs whose variable-i
// next-value distributions agree exactly for every action even though their
// projections differ, i.e. the abstraction could be made coarser without
// breaking invariance. Informational only; nothing in the pipeline gates on
// it.
struct CoarsenessDiagnostic {
  bool maximally_coarse = true;
  std::optional<InvarianceCounterexample> mergeable_pair;
};
CoarsenessDiagnostic check_maximal_coarseness(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                              std::int64_t cap = 1 << 14);

// Per-variable worst-case L1 gap between next-value distributions of merged
// states: eps_p[i] = sup over actions and pairs with equal [x]_{S_i} of
// || P(x_i' | x1, a) - P(x_i' | x2, a) ||_1. Exact sup by enumeration.
std::vector<double> epsilon_model_invariance(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                             std::int64_t cap = kDefaultStateCap);
std::vector<double> epsilon_model_invariance_serial(const FactoredCdp& cdp,
                                                    const AbstractionPhi& phi,
                                                    std::int64_t cap = kDefaultStateCap);

// Worst-case reward gap over pairs with equal joint projection.
double epsilon_reward(const FactoredCdp& cdp, const AbstractionPhi& phi,
                      std::int64_t cap = kDefaultStateCap);

struct EpsilonProfile {
  std::vector<double> eps_p;
  double eps_r = 0.0;
  double eps_p_sum() const {
    double s = 0.0;
    for (double e : eps_p) s += e;
    return s;
  }
};

EpsilonProfile epsilon_profile(const FactoredCdp& cdp, const AbstractionPhi& phi,
                               std::int64_t cap = kDefaultStateCap);

// Reward-free bisimulation: states with equal joint projections must agree
// (within tol) on rewards and on lifted next-state rows, for every action.
bool check_bisimulation(const FactoredCdp& cdp, const AbstractionPhi& phi, double tol = 1e-12,
                        std::int64_t cap = kDefaultStateCap);

}  // namespace milab
