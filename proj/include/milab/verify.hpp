#pragma once

#include <cstdint>
#include <limits>

#include "milab/planning.hpp"

namespace milab {

// Randomized brute-force sweeps over small synthetic processes. Each driver
// draws `count` independent instances from the given seed and checks one of
// the abstraction guarantees exactly; reports carry the worst numbers seen so
// callers can print or serialize them.

// Parent abstractions must pass the exact (tol = 0) merge-direction
// invariance check on every instance. Instances: d in [1,4], per-variable
// domains in [2,4], actions in [1,3], parent sets up to full.
struct ParentInvarianceSweepReport {
  int count = 0;
  int failures = 0;
  double seconds = 0.0;
  bool ok() const { return failures == 0; }
};
ParentInvarianceSweepReport parent_invariance_sweep(int count, std::uint64_t seed);

// Model-error bound on random (process, abstraction, weights) triples with
// d in [1,3]: the worst L1 pushforward gap must stay within the summed
// per-variable defects, and the direct and telescoped evaluations of that
// gap must agree.
struct ModelErrorSweepReport {
  int count = 0;
  int violations = 0;            // instances with bound_holds == false
  int route_disagreements = 0;   // instances with routes_agree == false
  double min_slack = std::numeric_limits<double>::infinity();
  double max_route_gap = 0.0;
  double seconds = 0.0;
  bool ok() const { return violations == 0 && route_disagreements == 0; }
};
ModelErrorSweepReport model_error_bound_sweep(int count, std::uint64_t seed);

// Value-loss bound on random instances (d in [1,3], gamma in [0.7, 0.95])
// with a random data policy: nu is the policy's discounted occupancy, mu is
// uniform. Both printed inequalities must hold; slacks below -1e-8 count as
// violations (value iteration runs at tol 1e-9, so tighter demands would
// measure solver noise, not the bound).
struct ValueLossSweepReport {
  int count = 0;
  int violations = 0;
  double min_slack1 = std::numeric_limits<double>::infinity();
  double min_slack2 = std::numeric_limits<double>::infinity();
  double seconds = 0.0;
  bool ok() const { return violations == 0; }
};
ValueLossSweepReport value_loss_bound_sweep(int count, std::uint64_t seed);

}  // namespace milab
