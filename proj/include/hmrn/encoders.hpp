#pragma once

#include "hmrn/params.hpp"
#include "hmrn/vocabulary.hpp"

#include <span>
#include <vector>

namespace hmrn {

// ---------------------------------------------------------------------------
// Visual projection: V_loc = x W_v + b_v (row per region).

inline Matrix encode_regions(const Matrix& x, const Matrix& W_v, const Matrix& b_v) {
  require(x.cols() == W_v.rows(),
          "encode_regions: feature dim " + std::to_string(x.cols()) + " != W_v rows " +
              std::to_string(W_v.rows()));
  require(b_v.rows() == W_v.cols() && b_v.cols() == 1, "encode_regions: bias shape " + shape_str(b_v));
  require(x.allFinite(), "encode_regions: non-finite features");
  Matrix v = x * W_v;
  v.rowwise() += b_v.col(0).transpose();
  return v;
}

inline void encode_regions_backward(const Matrix& x, const Matrix& dV, Matrix& dW_v, Matrix& db_v) {
  dW_v.noalias() += x.transpose() * dV;
  db_v.col(0) += dV.colwise().sum().transpose();
}

// ---------------------------------------------------------------------------
// GRU cell (gate order r, z, n):
//   r = sig(W_ir e + b_ir + W_hr h + b_hr)
//   z = sig(W_iz e + b_iz + W_hz h + b_hz)
//   n = tanh(W_in e + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h

struct GruStepCache {
  Vector e, h_prev, r, z, n, gh_n;
};

inline Vector gru_step(const GruParams& g, const Vector& e, const Vector& h_prev, GruStepCache* cache) {
  const Index H = h_prev.size();
  const Vector gi = g.W_ih * e + g.b_ih.col(0);
  const Vector gh = g.W_hh * h_prev + g.b_hh.col(0);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Vector r = (gi.segment(0, H) + gh.segment(0, H)).unaryExpr(sigmoid);
  Vector z = (gi.segment(H, H) + gh.segment(H, H)).unaryExpr(sigmoid);
  Vector gh_n = gh.segment(2 * H, H);
  Vector n = (gi.segment(2 * H, H).array() + r.array() * gh_n.array()).tanh().matrix();
  Vector h = ((1.0 - z.array()) * n.array() + z.array() * h_prev.array()).matrix();
  if (cache) *cache = {e, h_prev, std::move(r), std::move(z), std::move(n), std::move(gh_n)};
  return h;
}

// Accumulates parameter gradients into `grad`; writes dL/de and dL/dh_prev.
inline void gru_step_backward(const GruParams& g, const GruStepCache& c, const Vector& dh, GruParams& grad,
                              Vector& de, Vector& dh_prev) {
  const Index H = dh.size();
  const Vector dn = (dh.array() * (1.0 - c.z.array())).matrix();
  const Vector dz = (dh.array() * (c.h_prev.array() - c.n.array())).matrix();
  const Vector dan = (dn.array() * (1.0 - c.n.array().square())).matrix();
  const Vector dr = (dan.array() * c.gh_n.array()).matrix();
  Vector dgi(3 * H), dgh(3 * H);
  const Vector dar = (dr.array() * c.r.array() * (1.0 - c.r.array())).matrix();
  const Vector daz = (dz.array() * c.z.array() * (1.0 - c.z.array())).matrix();
  dgi << dar, daz, dan;
  dgh << dar, daz, (dan.array() * c.r.array()).matrix();
  grad.W_ih.noalias() += dgi * c.e.transpose();
  grad.b_ih.col(0) += dgi;
  grad.W_hh.noalias() += dgh * c.h_prev.transpose();
  grad.b_hh.col(0) += dgh;
  de = g.W_ih.transpose() * dgi;
  dh_prev = (dh.array() * c.z.array()).matrix() + g.W_hh.transpose() * dgh;
}

// ---------------------------------------------------------------------------
// Query encoder: h_i = (fwd_i + bwd_i) / 2 and t = h_M, evaluated at the true
// length M. Tokens past M are never read.

struct QueryCache {
  std::vector<TokenId> tokens;
  std::vector<GruStepCache> fwd;
  GruStepCache bwd;
};

inline Vector encode_query(std::span<const TokenId> tokens, std::size_t length, const ModelParams& p,
                           QueryCache* cache = nullptr) {
  if (length == 0) throw Error("encode_query: query length must be >= 1");
  require(length <= tokens.size(), "encode_query: length exceeds token count");
  const Index H = p.gru_fwd.W_hh.cols();
  const auto V = p.W_e.rows();
  auto embed = [&](TokenId id) -> Vector {
    require(id >= 0 && id < V, "encode_query: token id out of range");
    return p.W_e.row(id).transpose();
  };
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(length));
    cache->fwd.resize(length);
  }
  Vector h = Vector::Zero(H);
  for (std::size_t i = 0; i < length; ++i)
    h = gru_step(p.gru_fwd, embed(tokens[i]), h, cache ? &cache->fwd[i] : nullptr);
  // The backward direction's state at position M has only consumed token M.
  const Vector hb = gru_step(p.gru_bwd, embed(tokens[length - 1]), Vector::Zero(H), cache ? &cache->bwd : nullptr);
  return 0.5 * (h + hb);
}

inline void encode_query_backward(const ModelParams& p, const QueryCache& c, const Vector& dt, ModelParams& grad) {
  const Vector half = 0.5 * dt;
  Vector de, dh_prev;
  gru_step_backward(p.gru_bwd, c.bwd, half, grad.gru_bwd, de, dh_prev);
  grad.W_e.row(c.tokens.back()) += de.transpose();
  Vector dh = half;
  for (std::size_t i = c.fwd.size(); i-- > 0;) {
    gru_step_backward(p.gru_fwd, c.fwd[i], dh, grad.gru_fwd, de, dh_prev);
    grad.W_e.row(c.tokens[i]) += de.transpose();
    dh = dh_prev;
  }
}

// ---------------------------------------------------------------------------
// Self-attention pooling:
//   f_ave = mean_i f_i
//   logit_i = W_s . ((W_ave f_ave) * (W_r f_i))
//   s = softmax(logit),  g = normalize(sum_i s_i f_i)
// With eps > 0 the norm is sqrt(|p|^2 + eps); eps == 0 is strict and
// rejects a zero pooled vector.

struct PoolResult {
  Vector g;
  Vector weights;
  // backward cache
  Vector f_ave, a, m, p;
  Matrix U;
  double norm = 0;
};

inline PoolResult pool_global(const Matrix& F, const PoolParams& q, double eps = kNormEps) {
  require(F.rows() >= 1, "pool_global: needs at least one row");
  require(F.cols() == q.W_r.cols(), "pool_global: feature dim mismatch");
  PoolResult r;
  r.f_ave = F.colwise().mean().transpose();
  r.a = q.W_ave * r.f_ave;
  r.m = (r.a.array() * q.W_s.col(0).array()).matrix();
  r.U = F * q.W_r.transpose();
  r.weights = r.U * r.m;
  softmax_inplace(r.weights);
  r.p = F.transpose() * r.weights;
  r.norm = std::sqrt(r.p.squaredNorm() + eps);
  if (r.norm == 0.0) throw Error("degenerate pooled vector");
  r.g = r.p / r.norm;
  return r;
}

// Accumulates into dF and the pooling gradients.
inline void pool_global_backward(const Matrix& F, const PoolParams& q, const PoolResult& r, const Vector& dg,
                                 Matrix& dF, PoolParams& grad) {
  const Index R = F.rows();
  const Vector dp = (dg - r.g * r.g.dot(dg)) / r.norm;
  dF.noalias() += r.weights * dp.transpose();
  const Vector ds = F * dp;
  const Vector dlogit = softmax_backward(r.weights, ds);
  const Vector dm = r.U.transpose() * dlogit;
  // U = F W_r^T, dU = dlogit m^T
  const Matrix dU = dlogit * r.m.transpose();
  grad.W_r.noalias() += dU.transpose() * F;
  dF.noalias() += dU * q.W_r;
  const Vector da = (dm.array() * q.W_s.col(0).array()).matrix();
  grad.W_s.col(0) += (dm.array() * r.a.array()).matrix();
  grad.W_ave.noalias() += da * r.f_ave.transpose();
  const Vector df_ave = q.W_ave.transpose() * da;
  dF.rowwise() += (df_ave / static_cast<double>(R)).transpose();
}

}  // namespace hmrn
