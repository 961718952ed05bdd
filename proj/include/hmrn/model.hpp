#pragma once

#include "hmrn/encoders.hpp"
#include "hmrn/scalar_matching.hpp"
#include "hmrn/vector_reasoning.hpp"

#include <span>
#include <vector>

namespace hmrn {

struct Model {
  ModelConfig config;
  ModelParams params;

  static Model initialized(const ModelConfig& cfg, std::uint64_t seed) { return {cfg, init_params(cfg, seed)}; }

  bool uses_it() const { return config.direction != Direction::TextImage; }
  bool uses_ti() const { return config.direction != Direction::ImageText; }
};

// ---------------------------------------------------------------------------
// Per-image and per-queryset encodings. These are shared by every pair an
// image or queryset takes part in.

struct ImageEncoding {
  Matrix V_loc;  // K x D
  Vector v_glo;  // unit
  PoolResult pool;
};

inline ImageEncoding encode_image(const Matrix& features, const ModelParams& p) {
  ImageEncoding e;
  e.V_loc = encode_regions(features, p.W_v, p.b_v);
  e.pool = pool_global(e.V_loc, p.pool_vis);
  e.v_glo = e.pool.g;
  return e;
}

inline void encode_image_backward(const Matrix& features, const ModelParams& p, const ImageEncoding& e,
                                  Matrix dV_loc, const Vector& dv_glo, ModelParams& grad) {
  pool_global_backward(e.V_loc, p.pool_vis, e.pool, dv_glo, dV_loc, grad.pool_vis);
  encode_regions_backward(features, dV_loc, grad.W_v, grad.b_v);
}

struct QuerySetEncoding {
  Matrix T_loc;  // rounds x D
  Vector t_glo;
  PoolResult pool;
  std::vector<QueryCache> caches;  // filled when encoded for training
};

// Per-query representations t_j, one row per query.
inline Matrix encode_query_rows(std::span<const std::vector<TokenId>> queries, const ModelParams& p,
                                std::vector<QueryCache>* caches = nullptr) {
  require(!queries.empty(), "encode_queryset: no queries");
  Matrix T(static_cast<Index>(queries.size()), p.gru_fwd.W_hh.cols());
  if (caches) caches->resize(queries.size());
  for (std::size_t j = 0; j < queries.size(); ++j)
    T.row(static_cast<Index>(j)) =
        encode_query(queries[j], queries[j].size(), p, caches ? &(*caches)[j] : nullptr).transpose();
  return T;
}

// Pools the first `rounds` rows of precomputed query representations.
inline QuerySetEncoding pool_query_prefix(const Matrix& T_all, std::size_t rounds, const ModelParams& p) {
  require(rounds >= 1 && static_cast<Index>(rounds) <= T_all.rows(), "round out of range");
  QuerySetEncoding e;
  e.T_loc = T_all.topRows(static_cast<Index>(rounds));
  e.pool = pool_global(e.T_loc, p.text_pool());
  e.t_glo = e.pool.g;
  return e;
}

inline QuerySetEncoding encode_queryset(std::span<const std::vector<TokenId>> queries, const ModelParams& p,
                                        bool keep_cache = false) {
  std::vector<QueryCache> caches;
  Matrix T = encode_query_rows(queries, p, keep_cache ? &caches : nullptr);
  QuerySetEncoding e = pool_query_prefix(T, queries.size(), p);
  e.caches = std::move(caches);
  return e;
}

inline void encode_queryset_backward(const ModelParams& p, const QuerySetEncoding& e, Matrix dT_loc,
                                     const Vector& dt_glo, ModelParams& grad) {
  require(e.caches.size() == static_cast<std::size_t>(e.T_loc.rows()), "queryset encoded without cache");
  pool_global_backward(e.T_loc, p.text_pool(), e.pool, dt_glo, dT_loc, grad.text_pool());
  for (std::size_t j = 0; j < e.caches.size(); ++j)
    encode_query_backward(p, e.caches[j], dT_loc.row(static_cast<Index>(j)).transpose(), grad);
}

// ---------------------------------------------------------------------------
// Pair scoring: local (both directions as configured), global, reasoning.

struct PairScores {
  double s_it = 0, s_ti = 0, s_g = 0, s_r = 0;
};

struct PairCache {
  CosineResult cos;
  AttendResult it, ti;
  ProjectResult proj;
  Matrix Vstk, Tstk;
  IntraResult intra;
  std::vector<ReasonStep> steps;
  Matrix C_star;
  double head_pre = 0;
};

inline PairScores score_pair(const Model& m, const Matrix& V_loc, const Vector& v_glo, const Matrix& T_loc,
                             const Vector& t_glo, PairCache* cache = nullptr) {
  const auto& cfg = m.config;
  const auto& p = m.params;
  PairCache local;
  PairCache& c = cache ? *cache : local;
  const Index N = T_loc.rows();
  const Index D = T_loc.cols();

  PairScores out;
  c.cos = cosine_matrix(V_loc, T_loc);
  if (m.uses_it()) {
    c.it = local_similarity_it(c.cos.S, cfg.lambda1);
    out.s_it = c.it.score;
  }
  if (m.uses_ti()) {
    c.ti = local_similarity_ti(c.cos.S, cfg.lambda2);
    out.s_ti = c.ti.score;
  }
  out.s_g = v_glo.dot(t_glo);
  // The reasoning branch only matters when it carries weight.
  if (cfg.beta <= 0.0) {
    c.head_pre = 0;
    return out;
  }

  c.proj = project_visual(c.cos.S, V_loc, cfg.lambda2);
  c.Vstk.resize(N + 1, D);
  c.Vstk << c.proj.Vp, v_glo.transpose();
  c.Tstk.resize(N + 1, D);
  c.Tstk << T_loc, t_glo.transpose();
  c.intra = intra_correlation(c.Vstk, c.Tstk, p.vr.W_c, cfg.intra_mode);
  c.C_star = reason(c.intra.C, p.vr, cfg.steps, &c.steps);
  c.head_pre = c.C_star.row(N).dot(p.vr.head_w.col(0)) + p.vr.head_b(0, 0);
  out.s_r = relu(c.head_pre);
  return out;
}

struct PairGrads {
  Matrix dV_loc;
  Vector dv_glo;
  Matrix dT_loc;
  Vector dt_glo;
};

// Backward of score_pair for upstream gradients `d` on each score.
// VR parameter gradients are accumulated into `grad`.
inline PairGrads score_pair_backward(const Model& m, const Matrix& V_loc, const Vector& v_glo, const Matrix& T_loc,
                                     const Vector& t_glo, const PairCache& c, const PairScores& d,
                                     ModelParams& grad) {
  const auto& cfg = m.config;
  const auto& p = m.params;
  const Index N = T_loc.rows();
  const Index D = T_loc.cols();
  PairGrads g{Matrix::Zero(V_loc.rows(), D), Vector::Zero(D), Matrix::Zero(N, D), Vector::Zero(D)};

  // S_G = v . t
  g.dv_glo = d.s_g * t_glo;
  g.dt_glo = d.s_g * v_glo;

  Matrix dS = Matrix::Zero(V_loc.rows(), N);
  if (m.uses_it() && d.s_it != 0.0) dS += local_similarity_it_backward(c.cos.S, cfg.lambda1, c.it, d.s_it);
  if (m.uses_ti() && d.s_ti != 0.0) dS += local_similarity_ti_backward(c.cos.S, cfg.lambda2, c.ti, d.s_ti);

  if (d.s_r != 0.0 && c.head_pre > 0.0) {
    grad.vr.head_w.col(0) += d.s_r * c.C_star.row(N).transpose();
    grad.vr.head_b(0, 0) += d.s_r;
    Matrix dC = Matrix::Zero(N + 1, D);
    dC.row(N) = d.s_r * p.vr.head_w.col(0).transpose();
    const Matrix dC0 = reason_backward(p.vr, c.steps, std::move(dC), grad.vr);
    Matrix dVstk = Matrix::Zero(N + 1, D), dTstk = Matrix::Zero(N + 1, D);
    intra_correlation_backward(p.vr.W_c, cfg.intra_mode, c.intra, dC0, grad.vr.W_c, dVstk, dTstk);
    g.dv_glo += dVstk.row(N).transpose();
    g.dt_glo += dTstk.row(N).transpose();
    g.dT_loc += dTstk.topRows(N);
    dS += project_visual_backward(c.cos.S, V_loc, cfg.lambda2, c.proj, dVstk.topRows(N), g.dV_loc);
  }
  cosine_matrix_backward(c.cos, dS, g.dV_loc, g.dT_loc);
  return g;
}

}  // namespace hmrn
