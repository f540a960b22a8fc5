#include "milab/invariance_loss.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "milab/errors.hpp"

namespace milab {

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& pred1, const Eigen::MatrixXd& pred2) {
  if (pred1.rows() != pred2.rows() || pred1.cols() != pred2.cols())
    throw InvalidInput("similarity_matrix: shape mismatch");
  if (pred1.rows() < 1 || pred1.cols() < 1)
    throw InvalidInput("similarity_matrix: empty input");
  const Eigen::Index n = pred1.rows();
  Eigen::VectorXd n1(n), n2(n);
  bool warned = false;
  for (Eigen::Index a = 0; a < n; ++a) {
    n1(a) = pred1.row(a).norm();
    n2(a) = pred2.row(a).norm();
    if ((n1(a) == 0.0 || n2(a) == 0.0) && !warned) {
      std::fprintf(stderr, "similarity_matrix: zero-norm row, emitting 0 entries for it\n");
      warned = true;
    }
  }
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const double denom = n1(a) * n2(b);
      out(a, b) = denom == 0.0 ? 0.0 : pred1.row(a).dot(pred2.row(b)) / denom;
    }
  }
  return out;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    const double mx = m.row(a).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index b = 0; b < m.cols(); ++b) {
      out(a, b) = std::exp(m(a, b) - mx);
      sum += out(a, b);
    }
    out.row(a) /= sum;
  }
  return out;
}

double kl_rows(const Eigen::MatrixXd& p1, const Eigen::MatrixXd& p2) {
  if (p1.rows() != p2.rows() || p1.cols() != p2.cols())
    throw InvalidInput("kl_rows: shape mismatch");
  double total = 0.0;
  for (Eigen::Index a = 0; a < p1.rows(); ++a) {
    for (Eigen::Index b = 0; b < p1.cols(); ++b) {
      const double p = p1(a, b);
      if (p == 0.0) continue;
      const double q = p2(a, b);
      if (q == 0.0) throw DivergentKL("kl_rows: p2 vanishes where p1 has mass");
      total += p * std::log(p / q);
    }
  }
  return total / static_cast<double>(p1.rows());
}

LinearCritic LinearCritic::random(int out_dim, int in_dim, std::uint64_t seed) {
  if (out_dim < 1 || in_dim < 1) throw InvalidInput("LinearCritic::random: bad dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LinearCritic g;
  g.w.resize(out_dim, in_dim);
  g.b.resize(out_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int r = 0; r < out_dim; ++r) {
    for (int c = 0; c < in_dim; ++c) g.w(r, c) = scale * gauss(rng);
    g.b(r) = 0.1 * gauss(rng);
  }
  return g;
}

Eigen::MatrixXd LinearCritic::embed(const Eigen::MatrixXd& input) const {
  if (input.cols() != w.cols())
    throw InvalidInput("LinearCritic: input width does not match the critic");
  return (input * w.transpose()).rowwise() + b.transpose();
}

namespace {

// Critic input per the config: the selected dimension's column next to a
// one-hot dimension tag, or the whole prediction row.
Eigen::MatrixXd critic_input(const Eigen::MatrixXd& z, const LossConfig& cfg) {
  if (cfg.mode == LossMode::kPerState) return z;
  const Eigen::Index d = z.cols();
  if (cfg.selected_dim < 0 || cfg.selected_dim >= d)
    throw InvalidInput("invariance loss: selected_dim out of range");
  Eigen::MatrixXd input = Eigen::MatrixXd::Zero(z.rows(), 1 + d);
  input.col(0) = z.col(cfg.selected_dim);
  input.col(1 + cfg.selected_dim).setOnes();
  return input;
}

struct ForwardPass {
  Eigen::MatrixXd u;   // differentiable embedding (from z1_var)
  Eigen::MatrixXd w;   // embedding of z2
  Eigen::MatrixXd s1, s2, p1, p2;
  double loss = 0.0;
};

ForwardPass forward(const Eigen::MatrixXd& z1_var, const Eigen::MatrixXd& z1_frozen,
                    const Eigen::MatrixXd& z2, const LossConfig& cfg,
                    const LinearCritic& critic) {
  if (z1_var.rows() != z2.rows() || z1_var.cols() != z2.cols() ||
      z1_frozen.rows() != z2.rows() || z1_frozen.cols() != z2.cols())
    throw InvalidInput("invariance loss: prediction matrices must share a shape");
  ForwardPass f;
  f.u = critic.embed(critic_input(z1_var, cfg));
  const Eigen::MatrixXd u_frozen = critic.embed(critic_input(z1_frozen, cfg));
  f.w = critic.embed(critic_input(z2, cfg));
  if (cfg.detach_second) {
    f.s1 = similarity_matrix(f.u, f.w);
    f.s2 = similarity_matrix(f.w, u_frozen);
  } else {
    f.s1 = similarity_matrix(u_frozen, f.w);
    f.s2 = similarity_matrix(f.w, f.u);
  }
  f.p1 = row_softmax(f.s1);
  f.p2 = row_softmax(f.s2);
  f.loss = kl_rows(f.p1, f.p2);
  return f;
}

// d cos(u, v) / du given the precomputed cosine, as a row vector.
Eigen::RowVectorXd cosine_grad_first(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v,
                                     double cosine) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return Eigen::RowVectorXd::Zero(u.cols());
  return v / (nu * nv) - cosine * u / (nu * nu);
}

// Map a gradient in embedding space back onto z1.
Eigen::MatrixXd embed_grad_to_z(const Eigen::MatrixXd& grad_u, const LossConfig& cfg,
                                const LinearCritic& critic, Eigen::Index z_cols) {
  const Eigen::MatrixXd grad_input = grad_u * critic.w;  // n x in_dim
  if (cfg.mode == LossMode::kPerState) return grad_input;
  Eigen::MatrixXd grad_z = Eigen::MatrixXd::Zero(grad_u.rows(), z_cols);
  grad_z.col(cfg.selected_dim) = grad_input.col(0);
  return grad_z;
}

}  // namespace

InvarianceLossResult invariance_loss(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                                     const LossConfig& cfg, const LinearCritic& critic) {
  const ForwardPass f = forward(z1, z1, z2, cfg, critic);
  const Eigen::Index n = f.p1.rows();

  InvarianceLossResult out;
  out.loss = f.loss;
  Eigen::MatrixXd grad_u = Eigen::MatrixXd::Zero(f.u.rows(), f.u.cols());

  if (cfg.detach_second) {
    // Gradient reaches z1 through s1's rows: for row a with p = p1(a,:),
    // q = p2(a,:), t = log p - log q and kl_a = <p, t>,
    //   dL/ds1(a,c) = p_c (t_c - kl_a) / n.
    for (Eigen::Index a = 0; a < n; ++a) {
      Eigen::RowVectorXd t(n);
      double kl_a = 0.0;
      for (Eigen::Index b = 0; b < n; ++b) {
        t(b) = std::log(f.p1(a, b)) - std::log(f.p2(a, b));
        kl_a += f.p1(a, b) * t(b);
      }
      for (Eigen::Index c = 0; c < n; ++c) {
        const double ds = f.p1(a, c) * (t(c) - kl_a) / static_cast<double>(n);
        if (ds == 0.0) continue;
        grad_u.row(a) += ds * cosine_grad_first(f.u.row(a), f.w.row(c), f.s1(a, c));
      }
    }
  } else {
    // Gradient reaches z1 through s2's columns: dL/ds2(a,c) = (p2 - p1)(a,c) / n,
    // the classic softmax-under-constant-p1 form.
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const double ds = (f.p2(a, c) - f.p1(a, c)) / static_cast<double>(n);
        if (ds == 0.0) continue;
        // s2(a,c) = cos(w_a, u_c); differentiate in the second argument.
        grad_u.row(c) += ds * cosine_grad_first(f.u.row(c), f.w.row(a), f.s2(a, c));
      }
    }
  }
  out.grad_z1 = embed_grad_to_z(grad_u, cfg, critic, z1.cols());
  return out;
}

double invariance_loss_split(const Eigen::MatrixXd& z1_var, const Eigen::MatrixXd& z1_frozen,
                             const Eigen::MatrixXd& z2, const LossConfig& cfg,
                             const LinearCritic& critic) {
  return forward(z1_var, z1_frozen, z2, cfg, critic).loss;
}

double total_model_loss(const Eigen::MatrixXd& pred_next, const Eigen::MatrixXd& true_next,
                        double inv, double weight) {
  if (pred_next.rows() != true_next.rows() || pred_next.cols() != true_next.cols())
    throw InvalidInput("total_model_loss: shape mismatch");
  if (!(weight >= 0.0)) throw InvalidInput("total_model_loss: weight must be >= 0");
  const double mse = (pred_next - true_next).array().square().mean();
  return mse + weight * inv;
}

}  // namespace milab
