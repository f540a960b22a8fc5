#pragma once

#include <vector>

namespace milab {

// Regularized incomplete beta I_x(a,b), continued-fraction evaluation,
// absolute accuracy around 1e-10 for moderate (a,b). Requires a,b > 0 and
// x in [0,1].
double regularized_incomplete_beta(double x, double a, double b);

// Two-sided tail probability of a Student t statistic with df degrees of
// freedom: 2 * P(T >= |t|). df may be fractional (Welch).
double student_t_two_sided_p(double t, double df);

// Two-sided p for an F statistic with (d1, d2) degrees of freedom:
// 2 * min(cdf, 1 - cdf), clamped to [0,1].
double f_two_sided_p(double f, double d1, double d2);

struct SampleMoments {
  double mean = 0.0;
  double var = 0.0;  // unbiased (n-1 denominator); 0 when n < 2
  std::size_t n = 0;
};
SampleMoments sample_moments(const std::vector<double>& xs);

// Welch unequal-variance two-sample t-test; returns the two-sided p.
// Degenerate spread on both sides collapses to p = 1 when the means agree
// (identical constants) and p = 0 when they do not.
double welch_t_test_p(const SampleMoments& a, const SampleMoments& b);

// Two-sided variance-ratio F test with (n1-1, n2-1) degrees of freedom,
// same degenerate handling.
double variance_ratio_test_p(const SampleMoments& a, const SampleMoments& b);

}  // namespace milab
