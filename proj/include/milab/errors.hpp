#pragma once

#include <stdexcept>
#include <string>

namespace milab {

// Input violating a documented precondition: bad shapes, unnormalized rows,
// out-of-range indices, malformed files.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An operation would enumerate or materialize a state space past its cap.
struct TooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rank-deficient design matrix in a least-squares fit.
struct SingularDesign : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lookup of an estimated quantity for a key with zero observations.
// Deliberately distinct from an estimate of probability zero.
struct NoData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// KL divergence query where the second argument has a zero where the first
// does not.
struct DivergentKL : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Density-ratio style quantity with mass outside the reference support.
struct Unbounded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace milab
