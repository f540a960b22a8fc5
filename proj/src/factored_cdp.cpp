#include "milab/factored_cdp.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace milab {

namespace {

std::int64_t checked_product(const std::vector<int>& sizes) {
  std::int64_t n = 1;
  for (int s : sizes) {
    if (s < 1) throw InvalidInput("domain sizes must be >= 1");
    if (n > std::numeric_limits<std::int64_t>::max() / s)
      throw TooLarge("state count overflows 64-bit index space");
    n *= s;
  }
  return n;
}

void check_row_normalized(const double* p, int len, const char* what) {
  double sum = 0.0;
  for (int v = 0; v < len; ++v) {
    if (!(p[v] >= 0.0)) throw InvalidInput(std::string(what) + ": negative or NaN entry");
    sum += p[v];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidInput(std::string(what) + ": row sums to " + std::to_string(sum));
}

}  // namespace

std::int64_t CdpShape::state_count() const { return checked_product(domain_sizes); }

std::int64_t CdpShape::flat_index(const StateVector& x) const {
  if (static_cast<int>(x.size()) != d) throw InvalidInput("state vector has wrong length");
  std::int64_t idx = 0;
  for (int i = 0; i < d; ++i) {
    if (x[i] < 0 || x[i] >= domain_sizes[i]) throw InvalidInput("state value out of domain");
    idx = idx * domain_sizes[i] + x[i];
  }
  return idx;
}

StateVector CdpShape::unflatten(std::int64_t idx) const {
  StateVector x(d);
  for (int i = d - 1; i >= 0; --i) {
    x[i] = static_cast<int>(idx % domain_sizes[i]);
    idx /= domain_sizes[i];
  }
  return x;
}

void CdpShape::validate() const {
  if (d < 1) throw InvalidInput("d must be >= 1");
  if (static_cast<int>(domain_sizes.size()) != d) throw InvalidInput("domain_sizes length != d");
  if (action_count < 1) throw InvalidInput("action_count must be >= 1");
  checked_product(domain_sizes);
}

std::int64_t FactoredCdp::key_count(int i) const {
  std::int64_t n = 1;
  for (int p : parents[i]) n *= domain_sizes[p];
  return n;
}

std::int64_t FactoredCdp::parent_key(int i, const StateVector& x) const {
  std::int64_t key = 0;
  for (int p : parents[i]) key = key * domain_sizes[p] + x[p];
  return key;
}

std::span<const double> FactoredCdp::factor_row(int i, std::int64_t key, int a) const {
  const int dom = domain_sizes[i];
  const double* base = factors[i].data() + (key * action_count + a) * dom;
  return {base, static_cast<std::size_t>(dom)};
}

double FactoredCdp::transition_prob(const StateVector& x, int a, const StateVector& next) const {
  if (a < 0 || a >= action_count) throw InvalidInput("action out of range");
  if (static_cast<int>(next.size()) != d) throw InvalidInput("next state has wrong length");
  double p = 1.0;
  for (int i = 0; i < d; ++i) {
    if (next[i] < 0 || next[i] >= domain_sizes[i])
      throw InvalidInput("next state value out of domain");
    p *= factor_row_for(i, x, a)[next[i]];
  }
  return p;
}

void FactoredCdp::validate() const {
  shape().validate();
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("gamma must lie in (0,1)");
  if (!(r_max > 0.0)) throw InvalidInput("r_max must be positive");
  if (static_cast<int>(parents.size()) != d) throw InvalidInput("parents length != d");
  if (static_cast<int>(factors.size()) != d) throw InvalidInput("factors length != d");
  for (int i = 0; i < d; ++i) {
    int prev = -1;
    for (int p : parents[i]) {
      if (p < 0 || p >= d) throw InvalidInput("parent index out of range");
      if (p <= prev) throw InvalidInput("parent sets must be sorted and unique");
      prev = p;
    }
    const std::int64_t rows = key_count(i) * action_count;
    if (static_cast<std::int64_t>(factors[i].size()) != rows * domain_sizes[i])
      throw InvalidInput("factor table has wrong size");
    for (std::int64_t r = 0; r < rows; ++r)
      check_row_normalized(factors[i].data() + r * domain_sizes[i], domain_sizes[i],
                           "transition factor");
  }
  const std::int64_t n = state_count();
  if (static_cast<std::int64_t>(reward.size()) != n * action_count)
    throw InvalidInput("reward table has wrong size");
  for (double r : reward)
    if (!(r >= 0.0 && r <= r_max)) throw InvalidInput("reward outside [0, r_max]");
  if (static_cast<std::int64_t>(mu0.size()) != n) throw InvalidInput("mu0 has wrong size");
  check_row_normalized(mu0.data(), static_cast<int>(n), "mu0");
}

std::vector<double> compose_transition(const FactoredCdp& cdp, const StateVector& x, int a,
                                       std::int64_t cap) {
  const std::int64_t n = cdp.state_count();
  if (n > cap) throw TooLarge("compose_transition: state space larger than cap");
  if (a < 0 || a >= cdp.action_count) throw InvalidInput("action out of range");
  // Build the product distribution one variable at a time, most significant
  // variable first, so the result is indexed exactly like flat_index.
  std::vector<double> row{1.0};
  std::vector<double> next;
  for (int i = 0; i < cdp.d; ++i) {
    auto f = cdp.factor_row_for(i, x, a);
    next.assign(row.size() * f.size(), 0.0);
    for (std::size_t prev = 0; prev < row.size(); ++prev)
      for (std::size_t v = 0; v < f.size(); ++v) next[prev * f.size() + v] = row[prev] * f[v];
    row.swap(next);
  }
  return row;
}

Policy Policy::uniform(std::int64_t states, int actions) {
  Policy pi;
  pi.action_count = actions;
  pi.probs.assign(states * actions, 1.0 / actions);
  return pi;
}

Policy Policy::from_row(std::int64_t states, const std::vector<double>& row) {
  Policy pi;
  pi.action_count = static_cast<int>(row.size());
  pi.probs.resize(states * pi.action_count);
  for (std::int64_t x = 0; x < states; ++x)
    for (int a = 0; a < pi.action_count; ++a) pi.probs[x * pi.action_count + a] = row[a];
  return pi;
}

void Policy::validate(std::int64_t states) const {
  if (action_count < 1) throw InvalidInput("policy action_count must be >= 1");
  if (static_cast<std::int64_t>(probs.size()) != states * action_count)
    throw InvalidInput("policy table has wrong size");
  for (std::int64_t x = 0; x < states; ++x)
    check_row_normalized(probs.data() + x * action_count, action_count, "policy row");
}

}  // namespace milab
