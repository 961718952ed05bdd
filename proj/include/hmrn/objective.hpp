#pragma once

#include "hmrn/params.hpp"

namespace hmrn {

struct SimilarityBundle {
  double s_it = 0, s_ti = 0, s_g = 0, s_r = 0;
  double s1 = 0, s2 = 0, s_ensemble = 0;
};

// alpha * S_L + beta * S_R + (1 - alpha - beta) * S_G
inline double aggregate_similarity(double s_local, double s_r, double s_g, double alpha, double beta) {
  require(alpha >= 0 && beta >= 0 && alpha + beta <= 1.0 + 1e-12, "invalid weight factors");
  return alpha * s_local + beta * s_r + (1.0 - alpha - beta) * s_g;
}

inline double ensemble_similarity(double s1, double s2) { return s1 + s2; }

inline SimilarityBundle make_bundle(double s_it, double s_ti, double s_g, double s_r, double alpha, double beta) {
  SimilarityBundle b{s_it, s_ti, s_g, s_r};
  b.s1 = aggregate_similarity(s_it, s_r, s_g, alpha, beta);
  b.s2 = aggregate_similarity(s_ti, s_r, s_g, alpha, beta);
  b.s_ensemble = ensemble_similarity(b.s1, b.s2);
  return b;
}

// Bidirectional InfoNCE over an n x n similarity matrix, rows = images,
// columns = querysets, matched pairs on the diagonal:
//   L = -(1/n) sum_g [log softmax_row(tau Sim)_gg + log softmax_col(tau Sim)_gg]
// If `grad` is non-null it receives dL/dSim.
inline double infonce_loss(const Matrix& sim, double tau, Matrix* grad = nullptr) {
  require(sim.rows() == sim.cols() && sim.rows() >= 1, "infonce_loss: needs a square matrix");
  require(tau > 0, "infonce_loss: tau must be > 0");
  if (!sim.allFinite()) throw Error("infonce_loss: non-finite similarity");
  const Index n = sim.rows();
  const Matrix z = tau * sim;
  Vector row_lse(n), col_lse(n);
  for (Index g = 0; g < n; ++g) {
    row_lse(g) = log_sum_exp(z.row(g).transpose());
    col_lse(g) = log_sum_exp(z.col(g));
  }
  double loss = 0;
  for (Index g = 0; g < n; ++g) loss += (row_lse(g) - z(g, g)) + (col_lse(g) - z(g, g));
  loss /= static_cast<double>(n);
  if (grad) {
    grad->resize(n, n);
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b) {
        double v = std::exp(z(a, b) - row_lse(a)) + std::exp(z(a, b) - col_lse(b));
        if (a == b) v -= 2.0;
        (*grad)(a, b) = tau * v / static_cast<double>(n);
      }
  }
  return loss;
}

inline double total_loss(double loss_local, double loss_reason, double loss_global, double alpha, double beta) {
  if (alpha + beta > 1.0 + 1e-12) throw Error("alpha + beta must not exceed 1");
  require(alpha >= 0 && beta >= 0, "alpha, beta must be >= 0");
  return alpha * loss_local + beta * loss_reason + (1.0 - alpha - beta) * loss_global;
}

}  // namespace hmrn
