#pragma once

#include "hmrn/params.hpp"

#include <vector>

namespace hmrn {

// ---------------------------------------------------------------------------
// Projection of regions into query space with text-image attention.
// Each region's clipped similarities are normalized over the N queries:
//   st_ij = [S_ij]+ / (sqrt(sum_j [S_ij]+^2) + eps)
// then every query j attends over regions: A_.j = softmax_i(lambda2 st_ij),
// and v^p_j = sum_i A_ij v_i.

struct ProjectResult {
  Matrix Vp;  // N x D
  Matrix A;   // K x N, columns sum to 1
  Matrix P, St;
  Vector norms;
  double eps = kNormEps;
};

inline ProjectResult project_visual(const Matrix& S, const Matrix& V, double lambda2, double eps = kNormEps) {
  require(S.rows() >= 1 && S.cols() >= 1, "project_visual: empty similarity matrix");
  require(S.rows() == V.rows(), "project_visual: S rows must match region count");
  ProjectResult r;
  r.eps = eps;
  r.P = S.cwiseMax(0.0);
  r.norms = r.P.rowwise().norm();
  r.St.resize(S.rows(), S.cols());
  for (Index i = 0; i < S.rows(); ++i) {
    const double den = r.norms(i) + eps;
    if (den > 0.0) {
      r.St.row(i) = r.P.row(i) / den;
    } else {
      r.St.row(i).setZero();
    }
  }
  r.A = lambda2 * r.St;
  for (Index j = 0; j < r.A.cols(); ++j) softmax_inplace(r.A.col(j));
  r.Vp.noalias() = r.A.transpose() * V;
  return r;
}

// Returns dL/dS; accumulates dL/dV into dV.
inline Matrix project_visual_backward(const Matrix& S, const Matrix& V, double lambda2, const ProjectResult& r,
                                      const Matrix& dVp, Matrix& dV) {
  dV.noalias() += r.A * dVp;
  const Matrix dA = V * dVp.transpose();
  Matrix dSt(r.A.rows(), r.A.cols());
  for (Index j = 0; j < r.A.cols(); ++j) dSt.col(j) = lambda2 * softmax_backward(r.A.col(j), dA.col(j));
  Matrix dS(S.rows(), S.cols());
  for (Index i = 0; i < S.rows(); ++i) {
    const double n = r.norms(i);
    const double den = n + r.eps;
    if (den <= 0.0) {
      dS.row(i).setZero();
      continue;
    }
    const double inner = dSt.row(i).dot(r.P.row(i));
    for (Index j = 0; j < S.cols(); ++j) {
      double dp = dSt(i, j) / den;
      if (n > 0.0) dp -= inner / (den * den) * r.P(i, j) / n;
      dS(i, j) = S(i, j) > 0.0 ? dp : 0.0;
    }
  }
  return dS;
}

// ---------------------------------------------------------------------------
// Intra-correlation nodes. Rows are the N region-query pairs then the global
// pair. sub: c = normalize(((v - t)^2) W_c); concat: c = normalize([v, t] W_c).

struct IntraResult {
  Matrix C;      // (N+1) x D
  Matrix input;  // (v - t)^2 or [v, t]
  Matrix diff;   // v - t (sub mode)
  Vector norms;
  double eps = kNormEps;
};

inline IntraResult intra_correlation(const Matrix& V, const Matrix& T, const Matrix& W_c, IntraMode mode,
                                     double eps = kNormEps) {
  require(V.rows() == T.rows() && V.cols() == T.cols(),
          "intra_correlation: shape mismatch " + shape_str(V) + " vs " + shape_str(T));
  IntraResult r;
  r.eps = eps;
  if (mode == IntraMode::Sub) {
    require(W_c.rows() == V.cols(), "intra_correlation: W_c must be D x D in sub mode");
    r.diff = V - T;
    r.input = r.diff.array().square().matrix();
  } else {
    require(W_c.rows() == 2 * V.cols(), "intra_correlation: W_c must be 2D x D in concat mode");
    r.input.resize(V.rows(), 2 * V.cols());
    r.input << V, T;
  }
  const Matrix raw = r.input * W_c;
  r.C = normalize_rows(raw, eps, r.norms);
  return r;
}

inline void intra_correlation_backward(const Matrix& W_c, IntraMode mode, const IntraResult& r, const Matrix& dC,
                                       Matrix& dW_c, Matrix& dV, Matrix& dT) {
  const Matrix draw = normalize_rows_backward(r.C, r.norms, dC, r.eps);
  dW_c.noalias() += r.input.transpose() * draw;
  const Matrix dinput = draw * W_c.transpose();
  if (mode == IntraMode::Sub) {
    const Matrix dd = 2.0 * (r.diff.array() * dinput.array()).matrix();
    dV += dd;
    dT -= dd;
  } else {
    const Index D = dV.cols();
    dV += dinput.leftCols(D);
    dT += dinput.rightCols(D);
  }
}

// ---------------------------------------------------------------------------
// Affinity between graph nodes: A(q, k) = softmax over q of (C_q W_q).(C_k W_k).
// Column k holds the weights of every incoming node q for node k.

struct AffinityResult {
  Matrix A, Q, Kk;
};

inline AffinityResult affinity(const Matrix& C, const Matrix& W_q, const Matrix& W_k) {
  require(C.allFinite(), "affinity: non-finite nodes");
  AffinityResult r;
  r.Q.noalias() = C * W_q;
  r.Kk.noalias() = C * W_k;
  r.A.noalias() = r.Q * r.Kk.transpose();
  for (Index k = 0; k < r.A.cols(); ++k) softmax_inplace(r.A.col(k));
  return r;
}

inline void affinity_backward(const Matrix& C, const Matrix& W_q, const Matrix& W_k, const AffinityResult& r,
                              const Matrix& dA, Matrix& dC, Matrix& dW_q, Matrix& dW_k) {
  Matrix dG(r.A.rows(), r.A.cols());
  for (Index k = 0; k < r.A.cols(); ++k) dG.col(k) = softmax_backward(r.A.col(k), dA.col(k));
  const Matrix dQ = dG * r.Kk;
  const Matrix dK = dG.transpose() * r.Q;
  dW_q.noalias() += C.transpose() * dQ;
  dW_k.noalias() += C.transpose() * dK;
  dC.noalias() += dQ * W_q.transpose();
  dC.noalias() += dK * W_k.transpose();
}

// ---------------------------------------------------------------------------
// Graph reasoning: C^{l+1}_k = ReLU((sum_q A(q,k) C^l_q) W_R), affinity
// recomputed from C^l at every step, W_R shared across steps.

struct ReasonStep {
  Matrix C_in;
  AffinityResult aff;
  Matrix agg, pre;
};

inline Matrix reason_step(const Matrix& C, const VrParams& vr, ReasonStep* cache) {
  AffinityResult aff = affinity(C, vr.W_q, vr.W_k);
  Matrix agg = aff.A.transpose() * C;
  Matrix pre = agg * vr.W_R;
  Matrix out = pre.cwiseMax(0.0);
  if (cache) *cache = {C, std::move(aff), std::move(agg), std::move(pre)};
  return out;
}

inline Matrix reason(const Matrix& C0, const VrParams& vr, std::size_t steps,
                     std::vector<ReasonStep>* caches = nullptr) {
  require(steps >= 1, "reason: steps must be >= 1");
  if (caches) caches->resize(steps);
  Matrix C = C0;
  for (std::size_t l = 0; l < steps; ++l) C = reason_step(C, vr, caches ? &(*caches)[l] : nullptr);
  return C;
}

// Backpropagates dL/dC* through the steps; returns dL/dC0.
inline Matrix reason_backward(const VrParams& vr, const std::vector<ReasonStep>& caches, Matrix dC, VrParams& grad) {
  for (std::size_t l = caches.size(); l-- > 0;) {
    const auto& s = caches[l];
    const Matrix dpre = (s.pre.array() > 0.0).select(dC, 0.0);
    grad.W_R.noalias() += s.agg.transpose() * dpre;
    const Matrix dagg = dpre * vr.W_R.transpose();
    Matrix dCin = s.aff.A * dagg;
    const Matrix dA = s.C_in * dagg.transpose();
    affinity_backward(s.C_in, vr.W_q, vr.W_k, s.aff, dA, dCin, grad.W_q, grad.W_k);
    dC = std::move(dCin);
  }
  return dC;
}

// S_R = ReLU(w . c*_glo + b), read off the last (global) node.
inline double reasoning_similarity(const Matrix& C_star, const Matrix& head_w, const Matrix& head_b) {
  require(C_star.rows() >= 1, "reasoning_similarity: no nodes");
  return relu(C_star.row(C_star.rows() - 1).dot(head_w.col(0)) + head_b(0, 0));
}

}  // namespace hmrn
