#include "milab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "milab/errors.hpp"

namespace milab {

namespace {

// Continued fraction for the incomplete beta, modified Lentz.
// https://en.wikipedia.org/wiki/Lentz%27s_algorithm
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;

  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    // Even step.
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    // Odd step.
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidInput("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidInput("incomplete beta needs x in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  // The continued fraction converges fastest below the mean of the
  // distribution; reflect otherwise.
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(log_front) * beta_continued_fraction(x, a, b) / a;
  return 1.0 - std::exp(log_front) * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InvalidInput("t test needs df > 0");
  const double t2 = t * t;
  // 2*P(T >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
  return regularized_incomplete_beta(df / (df + t2), 0.5 * df, 0.5);
}

double f_two_sided_p(double f, double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0)) throw InvalidInput("F test needs positive df");
  if (!(f >= 0.0)) throw InvalidInput("F statistic must be nonnegative");
  const double cdf = regularized_incomplete_beta(d1 * f / (d1 * f + d2), 0.5 * d1, 0.5 * d2);
  return std::clamp(2.0 * std::min(cdf, 1.0 - cdf), 0.0, 1.0);
}

SampleMoments sample_moments(const std::vector<double>& xs) {
  SampleMoments m;
  m.n = xs.size();
  if (m.n == 0) return m;
  double sum = 0.0;
  for (double v : xs) sum += v;
  m.mean = sum / m.n;
  if (m.n >= 2) {
    double ss = 0.0;
    for (double v : xs) ss += (v - m.mean) * (v - m.mean);
    m.var = ss / (m.n - 1);
  }
  return m;
}

namespace {
constexpr double kDegenerateVar = 1e-24;
constexpr double kDegenerateMeanGap = 1e-12;
}  // namespace

double welch_t_test_p(const SampleMoments& a, const SampleMoments& b) {
  if (a.n < 2 || b.n < 2) throw InvalidInput("t test needs at least 2 samples per group");
  const double va = a.var / a.n;
  const double vb = b.var / b.n;
  if (va + vb < kDegenerateVar)
    return std::abs(a.mean - b.mean) < kDegenerateMeanGap ? 1.0 : 0.0;
  const double t = (a.mean - b.mean) / std::sqrt(va + vb);
  const double df =
      (va + vb) * (va + vb) / (va * va / (a.n - 1) + vb * vb / (b.n - 1));
  return student_t_two_sided_p(t, df);
}

double variance_ratio_test_p(const SampleMoments& a, const SampleMoments& b) {
  if (a.n < 2 || b.n < 2) throw InvalidInput("F test needs at least 2 samples per group");
  if (a.var < kDegenerateVar && b.var < kDegenerateVar) return 1.0;
  if (b.var < kDegenerateVar || a.var < kDegenerateVar) return 0.0;
  return f_two_sided_p(a.var / b.var, static_cast<double>(a.n - 1),
                       static_cast<double>(b.n - 1));
}

}  // namespace milab
