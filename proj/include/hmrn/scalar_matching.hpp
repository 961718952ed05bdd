#pragma once

#include "hmrn/common.hpp"

namespace hmrn {

// Cosine similarity of every region (row of V) with every query (row of T).
// Norms are |x| + eps; eps == 0 is strict and rejects zero rows.
struct CosineResult {
  Matrix S;       // K x N
  Matrix Vh, Th;  // row-normalized inputs
  Vector nv, nt;  // denominators
  double eps = kNormEps;
};

inline CosineResult cosine_matrix(const Matrix& V, const Matrix& T, double eps = kNormEps) {
  require(V.cols() == T.cols(), "cosine_matrix: dim mismatch " + shape_str(V) + " vs " + shape_str(T));
  require(V.rows() >= 1 && T.rows() >= 1, "cosine_matrix: empty input");
  CosineResult r;
  r.eps = eps;
  r.Vh = normalize_rows(V, eps, r.nv);
  r.Th = normalize_rows(T, eps, r.nt);
  if (eps == 0.0) {
    require(r.nv.minCoeff() > 0.0 && r.nt.minCoeff() > 0.0, "cosine_matrix: zero-norm row");
  }
  r.S.noalias() = r.Vh * r.Th.transpose();
  return r;
}

inline void cosine_matrix_backward(const CosineResult& r, const Matrix& dS, Matrix& dV, Matrix& dT) {
  const Matrix dVh = dS * r.Th;
  const Matrix dTh = dS.transpose() * r.Vh;
  dV += normalize_rows_backward(r.Vh, r.nv, dVh, r.eps);
  dT += normalize_rows_backward(r.Th, r.nt, dTh, r.eps);
}

// Clipped cross attention over the columns of each row:
//   P = max(S, 0), alpha_i = softmax_j(lambda P_ij), r_i = sum_j alpha_ij P_ij,
//   score = mean_i r_i.
struct AttendResult {
  Matrix alpha;  // rows x cols, each row sums to 1
  Vector row_score;
  double score = 0;
};

inline AttendResult attend_rows(const Matrix& S, double lambda) {
  require(S.rows() >= 1 && S.cols() >= 1, "attend_rows: empty similarity matrix");
  require(lambda > 0, "attention temperature must be > 0");
  AttendResult r;
  r.alpha.resize(S.rows(), S.cols());
  r.row_score.resize(S.rows());
  for (Index i = 0; i < S.rows(); ++i) {
    const Vector p = S.row(i).transpose().cwiseMax(0.0);
    Vector a = lambda * p;
    softmax_inplace(a);
    r.alpha.row(i) = a.transpose();
    r.row_score(i) = a.dot(p);
  }
  r.score = r.row_score.mean();
  return r;
}

inline Matrix attend_rows_backward(const Matrix& S, double lambda, const AttendResult& r, double dscore) {
  const double drow = dscore / static_cast<double>(S.rows());
  Matrix dS(S.rows(), S.cols());
  for (Index i = 0; i < S.rows(); ++i) {
    for (Index j = 0; j < S.cols(); ++j) {
      const double s = S(i, j);
      dS(i, j) = s > 0.0 ? drow * r.alpha(i, j) * (1.0 + lambda * (s - r.row_score(i))) : 0.0;
    }
  }
  return dS;
}

// Image-text direction: each region attends over the queries (lambda1),
// averaged over the K regions.
inline AttendResult local_similarity_it(const Matrix& S, double lambda1) { return attend_rows(S, lambda1); }

// Text-image direction: each query attends over the regions (lambda2),
// averaged over the N queries. alpha is N x K.
inline AttendResult local_similarity_ti(const Matrix& S, double lambda2) {
  return attend_rows(S.transpose(), lambda2);
}

inline Matrix local_similarity_it_backward(const Matrix& S, double lambda1, const AttendResult& r, double d) {
  return attend_rows_backward(S, lambda1, r, d);
}

inline Matrix local_similarity_ti_backward(const Matrix& S, double lambda2, const AttendResult& r, double d) {
  return attend_rows_backward(S.transpose(), lambda2, r, d).transpose();
}

// S_G for two unit vectors.
inline double global_similarity(const Vector& v_glo, const Vector& t_glo) {
  require(v_glo.size() == t_glo.size(), "global_similarity: dim mismatch");
  require(std::abs(v_glo.norm() - 1.0) <= 1e-4 && std::abs(t_glo.norm() - 1.0) <= 1e-4,
          "global_similarity: inputs must be unit vectors");
  return v_glo.dot(t_glo);
}

}  // namespace hmrn
