#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "milab/errors.hpp"

namespace milab {

// One discrete value index per state variable, each in [0, domain_sizes[i]).
using StateVector = std::vector<int>;

// Enumeration guard: ops that materialize a vector per state (or a row per
// state-action pair) refuse to run past this many states unless the caller
// raises the cap explicitly.
inline constexpr std::int64_t kDefaultStateCap = std::int64_t{1} << 22;

// Shape of a factored process: enough to index states and actions without
// carrying the full model around.
struct CdpShape {
  int d = 0;
  std::vector<int> domain_sizes;
  int action_count = 1;

  std::int64_t state_count() const;
  // Flat state index, variable 0 most significant:
  //   idx = ((x[0] * dom1 + x[1]) * dom2 + x[2]) ...
  std::int64_t flat_index(const StateVector& x) const;
  StateVector unflatten(std::int64_t idx) const;
  void validate() const;
};

// Factored contextual decision process with finite per-variable domains.
// The next-state distribution factorizes per variable:
//   P(x' | x, a) = prod_i P_i(x'[i] | [x]_{parents[i]}, a)
// where [x]_S is the tuple of entries of x at the sorted index set S.
struct FactoredCdp {
  int d = 0;
  std::vector<int> domain_sizes;  // size d
  int action_count = 1;
  double gamma = 0.9;  // discount, must lie in (0,1)
  double r_max = 1.0;  // rewards live in [0, r_max]

  // parents[i]: sorted unique variable indices the i-th factor conditions on.
  std::vector<std::vector<int>> parents;

  // factors[i]: flattened table of size key_count(i) * action_count * dom_i,
  // laid out (key * action_count + a) * dom_i + v. The key runs over parent
  // assignments, first listed parent most significant (same convention as
  // flat_index).
  std::vector<std::vector<double>> factors;

  // reward[x * action_count + a], deterministic given the pair.
  std::vector<double> reward;

  // mu0[x]: initial state distribution.
  std::vector<double> mu0;

  CdpShape shape() const { return CdpShape{d, domain_sizes, action_count}; }
  std::int64_t state_count() const { return shape().state_count(); }
  std::int64_t flat_index(const StateVector& x) const { return shape().flat_index(x); }
  StateVector unflatten(std::int64_t idx) const { return shape().unflatten(idx); }

  // Number of parent assignments for variable i.
  std::int64_t key_count(int i) const;
  // Mixed-radix key of [x]_{parents[i]}.
  std::int64_t parent_key(int i, const StateVector& x) const;
  // The i-th factor's row P_i(. | [x]_{parents[i]}, a), length dom_i.
  std::span<const double> factor_row(int i, std::int64_t key, int a) const;
  std::span<const double> factor_row_for(int i, const StateVector& x, int a) const {
    return factor_row(i, parent_key(i, x), a);
  }

  double reward_at(std::int64_t x_flat, int a) const { return reward[x_flat * action_count + a]; }

  // Exact P(next | x, a): product of the per-variable factor entries.
  double transition_prob(const StateVector& x, int a, const StateVector& next) const;

  // Throws InvalidInput on any structural or normalization defect.
  // Probability rows must sum to 1 within 1e-9.
  void validate() const;
};

// Dense next-state distribution P(. | x, a) over flat state indices.
// Exact product of the per-variable factor rows; refuses state spaces
// past `cap` (TooLarge).
std::vector<double> compose_transition(const FactoredCdp& cdp, const StateVector& x, int a,
                                       std::int64_t cap = kDefaultStateCap);

// Per-state distribution over actions, row-major: probs[x * action_count + a].
struct Policy {
  int action_count = 1;
  std::vector<double> probs;

  static Policy uniform(std::int64_t states, int actions);
  // Same action distribution in every state.
  static Policy from_row(std::int64_t states, const std::vector<double>& row);

  std::span<const double> row(std::int64_t x_flat) const {
    return {probs.data() + x_flat * action_count, static_cast<std::size_t>(action_count)};
  }
  void validate(std::int64_t states) const;
};

// One logged transition.
struct TransitionRecord {
  int env = 0;
  int t = 0;
  StateVector x;
  int a = 0;
  StateVector x_next;
  double r = 0.0;
};

// All records collected in one environment (one data-collecting policy).
struct EnvironmentDataset {
  int env_id = 0;
  int horizon = 0;
  std::vector<TransitionRecord> records;
};

// A specific transition whose probability an estimator is asked for,
// plus the exact value reported by the generator that built the instance.
struct TransitionQuery {
  StateVector x;
  int a = 0;
  StateVector x_next;
  double truth = 0.0;
};

}  // namespace milab
