#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace milab {

// Numeric kernel of the invariance objective: cosine-similarity matrices
// between two batches of critic-embedded predictions, row softmax, one-sided
// KL, and its analytic gradient. No training loop lives here; the critic is a
// fixed linear map supplied by the caller.

// Cosine similarity of every row of pred1 against every row of pred2:
//   out(a, b) = <row_a(pred1), row_b(pred2)> / (|row_a(pred1)| * |row_b(pred2)|).
// Rows with zero norm produce 0 entries (warned once per call on stderr).
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& pred1, const Eigen::MatrixXd& pred2);

// Row-wise softmax, stabilized by subtracting each row's max. Rows of the
// result sum to 1 within 1e-12 for any finite input.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& m);

// Mean over rows of sum_b p1(a,b) * log(p1(a,b) / p2(a,b)), with the
// convention 0 * log(0/q) = 0. p2 is a constant for differentiation purposes
// (the one-sided gradient contract); a zero in p2 under positive p1 mass
// throws DivergentKL.
double kl_rows(const Eigen::MatrixXd& p1, const Eigen::MatrixXd& p2);

// Fixed affine critic g(u) = W u + b applied row-wise.
struct LinearCritic {
  Eigen::MatrixXd w;  // out_dim x in_dim
  Eigen::VectorXd b;  // out_dim

  // Gaussian entries scaled by 1/sqrt(in_dim); handy for seeded checks.
  static LinearCritic random(int out_dim, int in_dim, std::uint64_t seed);

  // input: n x in_dim, result: n x out_dim.
  Eigen::MatrixXd embed(const Eigen::MatrixXd& input) const;
};

enum class LossMode {
  kPerDimension,  // critic sees [z(:, dim), onehot(dim, d)]
  kPerState,      // critic sees whole z rows
};

struct LossConfig {
  LossMode mode = LossMode::kPerDimension;
  int selected_dim = 0;  // PerDimension only
  // Which similarity argument is held constant. true (the default) detaches
  // the second argument of each similarity product and the whole second
  // softmax, so the gradient flows through z1's appearance as the first
  // argument; false mirrors the pattern and differentiates through z1's
  // appearance as the second argument instead.
  bool detach_second = true;
};

struct InvarianceLossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_z1;  // same shape as z1
};

// loss = kl_rows(softmax(sim(g(z1 slice), g(z2 slice))),
//                softmax(sim(g(z2 slice), g(z1 slice))))
// plus the analytic gradient with respect to z1 under cfg's stop-gradient
// pattern. z1 = z2 gives exactly zero loss.
InvarianceLossResult invariance_loss(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                                     const LossConfig& cfg, const LinearCritic& critic);

// The loss as a function of z1's differentiable appearance only: z1_var is
// substituted where the gradient flows, z1_frozen everywhere else. Central
// finite differences of this function in z1_var reproduce the analytic
// gradient; differencing the plain loss would also move the detached copies.
double invariance_loss_split(const Eigen::MatrixXd& z1_var, const Eigen::MatrixXd& z1_frozen,
                             const Eigen::MatrixXd& z2, const LossConfig& cfg,
                             const LinearCritic& critic);

// Mean squared prediction error (over samples and dimensions) plus
// weight * inv.
double total_model_loss(const Eigen::MatrixXd& pred_next, const Eigen::MatrixXd& true_next,
                        double inv, double weight);

}  // namespace milab
