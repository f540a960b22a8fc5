#pragma once

// Independent reference implementations the tests compare the library
// against. Everything here recomputes its answer from first principles
// (plain enumeration, Gaussian elimination, Monte Carlo) without touching
// the code paths under test, so an agreement is evidence and not a tautology.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "milab/factored_cdp.hpp"

namespace milab::oracles {

// Dense next-state row by direct enumeration: walk every flat next state,
// unflatten it, and multiply the per-variable factor entries. Deliberately
// avoids compose_transition's tensor-product accumulation.
inline std::vector<double> dense_row(const FactoredCdp& cdp, const StateVector& x, int a) {
  const std::int64_t n = cdp.state_count();
  std::vector<double> row(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t y = 0; y < n; ++y) {
    const StateVector next = cdp.unflatten(y);
    double p = 1.0;
    for (int i = 0; i < cdp.d; ++i) p *= cdp.factor_row_for(i, x, a)[next[i]];
    row[static_cast<std::size_t>(y)] = p;
  }
  return row;
}

// Pushforward of a dense concrete row through a coordinate projection:
// out[key_over(joint, y)] += row[y]. The reference for lifted_row.
inline std::vector<double> pushforward(const CdpShape& shape, const std::vector<int>& joint,
                                       const std::vector<double>& dense) {
  std::int64_t keys = 1;
  for (int j : joint) keys *= shape.domain_sizes[j];
  std::vector<double> out(static_cast<std::size_t>(keys), 0.0);
  for (std::int64_t y = 0; y < static_cast<std::int64_t>(dense.size()); ++y) {
    const StateVector next = shape.unflatten(y);
    std::int64_t key = 0;
    for (int j : joint) key = key * shape.domain_sizes[j] + next[j];
    out[static_cast<std::size_t>(key)] += dense[static_cast<std::size_t>(y)];
  }
  return out;
}

// Pearson chi-square statistic of observed counts against expected
// probabilities. Callers freeze the critical value for their bin count.
inline double chi_square_stat(const std::vector<std::int64_t>& observed,
                              const std::vector<double>& expected_probs) {
  std::int64_t total = 0;
  for (std::int64_t c : observed) total += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double expected = expected_probs[i] * static_cast<double>(total);
    if (expected <= 0.0) {
      if (observed[i] != 0) return std::numeric_limits<double>::infinity();
      continue;
    }
    const double diff = static_cast<double>(observed[i]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

// Solves A x = b by Gaussian elimination with partial pivoting. The linear
// algebra backbone of the planning and OLS oracles; kept independent of
// Eigen on purpose.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                        std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-13) throw std::runtime_error("oracle solve: singular");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

// Least squares through the normal equations (X^T X) beta = X^T y, columns
// being the selected predictors plus a trailing intercept. Mirrors the
// fit_ols contract with a completely different solver.
inline std::vector<double> ols_normal_equations(const std::vector<std::vector<double>>& rows,
                                                const std::vector<double>& targets,
                                                const std::vector<int>& columns) {
  const std::size_t k = columns.size() + 1;  // + intercept
  std::vector<std::vector<double>> xtx(k, std::vector<double>(k, 0.0));
  std::vector<double> xty(k, 0.0);
  std::vector<double> feat(k, 1.0);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    for (std::size_t j = 0; j + 1 < k; ++j) feat[j] = rows[s][static_cast<std::size_t>(columns[j])];
    feat[k - 1] = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      xty[i] += feat[i] * targets[s];
      for (std::size_t j = 0; j < k; ++j) xtx[i][j] += feat[i] * feat[j];
    }
  }
  return solve_linear(std::move(xtx), std::move(xty));
}

// Dense tabular MDP for the tiny planning oracles.
struct DenseMdp {
  std::int64_t states = 0;
  int actions = 1;
  double gamma = 0.9;
  std::vector<double> p;  // (x * actions + a) * states + y
  std::vector<double> r;  // x * actions + a
};

inline DenseMdp densify(const FactoredCdp& cdp) {
  DenseMdp m;
  m.states = cdp.state_count();
  m.actions = cdp.action_count;
  m.gamma = cdp.gamma;
  m.p.resize(static_cast<std::size_t>(m.states * m.actions * m.states));
  m.r.resize(static_cast<std::size_t>(m.states * m.actions));
  for (std::int64_t x = 0; x < m.states; ++x) {
    const StateVector xv = cdp.unflatten(x);
    for (int a = 0; a < m.actions; ++a) {
      const std::vector<double> row = dense_row(cdp, xv, a);
      std::copy(row.begin(), row.end(),
                m.p.begin() + static_cast<std::ptrdiff_t>((x * m.actions + a) * m.states));
      m.r[static_cast<std::size_t>(x * m.actions + a)] = cdp.reward_at(x, a);
    }
  }
  return m;
}

// V^pi of a deterministic policy by solving (I - gamma P_pi) v = r_pi.
inline std::vector<double> policy_value_exact(const DenseMdp& m, const std::vector<int>& pi) {
  const std::size_t n = static_cast<std::size_t>(m.states);
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<double> b(n, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    const std::int64_t row = (static_cast<std::int64_t>(x) * m.actions + pi[x]) * m.states;
    for (std::size_t y = 0; y < n; ++y)
      a[x][y] = (x == y ? 1.0 : 0.0) - m.gamma * m.p[static_cast<std::size_t>(row) + y];
    b[x] = m.r[x * static_cast<std::size_t>(m.actions) + static_cast<std::size_t>(pi[x])];
  }
  return solve_linear(std::move(a), std::move(b));
}

// Q* by exhaustive policy enumeration: every one of actions^states
// deterministic policies is evaluated exactly and the pointwise best value
// is kept. Only viable for toy sizes, which is the point.
inline std::vector<double> optimal_q_by_enumeration(const DenseMdp& m) {
  const std::size_t n = static_cast<std::size_t>(m.states);
  std::int64_t policies = 1;
  for (std::size_t x = 0; x < n; ++x) {
    policies *= m.actions;
    if (policies > 1'000'000) throw std::runtime_error("oracle: policy space too large");
  }
  std::vector<double> v_star(n, -std::numeric_limits<double>::infinity());
  std::vector<int> pi(n, 0);
  for (std::int64_t code = 0; code < policies; ++code) {
    std::int64_t rem = code;
    for (std::size_t x = 0; x < n; ++x) {
      pi[x] = static_cast<int>(rem % m.actions);
      rem /= m.actions;
    }
    const std::vector<double> v = policy_value_exact(m, pi);
    for (std::size_t x = 0; x < n; ++x) v_star[x] = std::max(v_star[x], v[x]);
  }
  std::vector<double> q(n * static_cast<std::size_t>(m.actions), 0.0);
  for (std::size_t x = 0; x < n; ++x)
    for (int a = 0; a < m.actions; ++a) {
      const std::int64_t row = (static_cast<std::int64_t>(x) * m.actions + a) * m.states;
      double s = 0.0;
      for (std::size_t y = 0; y < n; ++y) s += m.p[static_cast<std::size_t>(row) + y] * v_star[y];
      q[x * static_cast<std::size_t>(m.actions) + static_cast<std::size_t>(a)] =
          m.r[x * static_cast<std::size_t>(m.actions) + static_cast<std::size_t>(a)] + m.gamma * s;
    }
  return q;
}

// Monte Carlo estimate of the normalized discounted visitation: the
// distribution of x_T with T ~ Geometric(1 - gamma) matches
// (1 - gamma) * sum_t gamma^t Pr[x_t = .] exactly, so sampling T then
// rolling the chain that far and binning the endpoint estimates rho.
inline std::vector<double> mc_visitation(const FactoredCdp& cdp, const Policy& pi,
                                         std::int64_t draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::geometric_distribution<int> steps(1.0 - cdp.gamma);
  const std::int64_t n = cdp.state_count();
  std::vector<std::int64_t> hits(static_cast<std::size_t>(n), 0);
  auto draw_from = [&rng](std::span<const double> probs) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      u -= probs[i];
      if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
  };
  for (std::int64_t k = 0; k < draws; ++k) {
    const int horizon = steps(rng);
    std::int64_t x = draw_from({cdp.mu0.data(), cdp.mu0.size()});
    StateVector xv = cdp.unflatten(x);
    for (int t = 0; t < horizon; ++t) {
      const int a = draw_from(pi.row(x));
      StateVector next(static_cast<std::size_t>(cdp.d));
      for (int i = 0; i < cdp.d; ++i) next[static_cast<std::size_t>(i)] = draw_from(cdp.factor_row_for(i, xv, a));
      xv = next;
      x = cdp.flat_index(xv);
    }
    ++hits[static_cast<std::size_t>(x)];
  }
  std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
  for (std::size_t i = 0; i < rho.size(); ++i)
    rho[i] = static_cast<double>(hits[i]) / static_cast<double>(draws);
  return rho;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double l1_gap(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

}  // namespace milab::oracles
