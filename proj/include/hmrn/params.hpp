#pragma once

#include "hmrn/common.hpp"

#include <random>
#include <string>

namespace hmrn {

enum class Direction { ImageText, TextImage, Joint };
enum class IntraMode { Sub, Concat };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::ImageText: return "it";
    case Direction::TextImage: return "ti";
    case Direction::Joint: return "joint";
  }
  return "?";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "it") return Direction::ImageText;
  if (s == "ti") return Direction::TextImage;
  if (s == "joint") return Direction::Joint;
  throw Error("unknown direction: " + s + " (expected it|ti|joint)");
}

inline std::string to_string(IntraMode m) { return m == IntraMode::Sub ? "sub" : "concat"; }

inline IntraMode parse_intra_mode(const std::string& s) {
  if (s == "sub") return IntraMode::Sub;
  if (s == "concat") return IntraMode::Concat;
  throw Error("unknown intra mode: " + s + " (expected sub|concat)");
}

// Architecture and scoring hyperparameters of one model. The GRU hidden size
// equals D.
struct ModelConfig {
  Direction direction = Direction::ImageText;
  std::size_t X = 2048;
  std::size_t E = 300;
  std::size_t D = 256;
  std::size_t vocab_size = 2;
  double lambda1 = 5.0;
  double lambda2 = 15.0;
  std::size_t steps = 3;
  IntraMode intra_mode = IntraMode::Sub;
  bool shared_pooling = false;
  double alpha = 0.4;
  double beta = 0.4;

  double gamma() const { return 1.0 - alpha - beta; }

  void validate() const {
    require(X >= 1 && E >= 1 && D >= 1, "model dims must be positive");
    require(vocab_size >= 2, "vocabulary must contain the two special ids");
    require(lambda1 > 0 && lambda2 > 0, "temperatures lambda1, lambda2 must be > 0");
    require(steps >= 1, "vr.steps must be >= 1");
    require(alpha >= 0 && beta >= 0, "alpha, beta must be >= 0");
    require(alpha + beta <= 1.0 + 1e-12, "alpha + beta must not exceed 1");
  }
};

// Arrays follow two conventions. W_v, W_c, W_q, W_k, W_R act on row vectors
// (y = x W, shape in x out). GRU and pooling matrices act on column vectors
// (y = W x), matching the usual recurrent-layer layout.
struct GruParams {
  Matrix W_ih;  // 3H x E, gate order r, z, n
  Matrix W_hh;  // 3H x H
  Matrix b_ih;  // 3H x 1
  Matrix b_hh;  // 3H x 1
};

struct PoolParams {
  Matrix W_ave;  // D x D
  Matrix W_r;    // D x D
  Matrix W_s;    // D x 1
};

struct VrParams {
  Matrix W_c;     // D x D (sub) or 2D x D (concat)
  Matrix W_q;     // D x D
  Matrix W_k;     // D x D
  Matrix W_R;     // D x D
  Matrix head_w;  // D x 1
  Matrix head_b;  // 1 x 1
};

struct ModelParams {
  Matrix W_v;  // X x D
  Matrix b_v;  // D x 1
  Matrix W_e;  // |V| x E
  GruParams gru_fwd, gru_bwd;
  PoolParams pool_vis, pool_txt;
  VrParams vr;
  bool shared_pooling = false;

  const PoolParams& text_pool() const { return shared_pooling ? pool_vis : pool_txt; }
  PoolParams& text_pool() { return shared_pooling ? pool_vis : pool_txt; }
};

// Visits every trainable array as (name, matrix). The text pooling block is
// skipped when it aliases the visual one.
template <typename Params, typename F>
void for_each_named(Params& p, F&& f) {
  f("W_v", p.W_v);
  f("b_v", p.b_v);
  f("W_e", p.W_e);
  auto gru = [&](const std::string& prefix, auto& g) {
    f(prefix + ".W_ih", g.W_ih);
    f(prefix + ".W_hh", g.W_hh);
    f(prefix + ".b_ih", g.b_ih);
    f(prefix + ".b_hh", g.b_hh);
  };
  gru("gru_fwd", p.gru_fwd);
  gru("gru_bwd", p.gru_bwd);
  auto pool = [&](const std::string& prefix, auto& q) {
    f(prefix + ".W_ave", q.W_ave);
    f(prefix + ".W_r", q.W_r);
    f(prefix + ".W_s", q.W_s);
  };
  pool("pool_vis", p.pool_vis);
  if (!p.shared_pooling) pool("pool_txt", p.pool_txt);
  f("vr.W_c", p.vr.W_c);
  f("vr.W_q", p.vr.W_q);
  f("vr.W_k", p.vr.W_k);
  f("vr.W_R", p.vr.W_R);
  f("vr.head_w", p.vr.head_w);
  f("vr.head_b", p.vr.head_b);
}

inline ModelParams shaped_params(const ModelConfig& cfg) {
  const auto X = static_cast<Index>(cfg.X), E = static_cast<Index>(cfg.E), D = static_cast<Index>(cfg.D);
  const auto V = static_cast<Index>(cfg.vocab_size);
  ModelParams p;
  p.shared_pooling = cfg.shared_pooling;
  p.W_v = Matrix::Zero(X, D);
  p.b_v = Matrix::Zero(D, 1);
  p.W_e = Matrix::Zero(V, E);
  for (auto* g : {&p.gru_fwd, &p.gru_bwd}) {
    g->W_ih = Matrix::Zero(3 * D, E);
    g->W_hh = Matrix::Zero(3 * D, D);
    g->b_ih = Matrix::Zero(3 * D, 1);
    g->b_hh = Matrix::Zero(3 * D, 1);
  }
  for (auto* q : {&p.pool_vis, &p.pool_txt}) {
    q->W_ave = Matrix::Zero(D, D);
    q->W_r = Matrix::Zero(D, D);
    q->W_s = Matrix::Zero(D, 1);
  }
  if (cfg.shared_pooling) p.pool_txt = PoolParams{};
  p.vr.W_c = Matrix::Zero(cfg.intra_mode == IntraMode::Sub ? D : 2 * D, D);
  p.vr.W_q = Matrix::Zero(D, D);
  p.vr.W_k = Matrix::Zero(D, D);
  p.vr.W_R = Matrix::Zero(D, D);
  p.vr.head_w = Matrix::Zero(D, 1);
  p.vr.head_b = Matrix::Zero(1, 1);
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_named(z, [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

inline double squared_norm(const ModelParams& p) {
  double s = 0;
  for_each_named(p, [&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
  return s;
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_named(p, [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, embeddings
// ~ N(0, 0.1). The reasoning head weights are drawn non-negative: the nodes
// feeding it are post-ReLU, so this keeps the head's ReLU live at start.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = shaped_params(cfg);
  std::mt19937_64 rng(seed);
  auto uniform = [&](Matrix& m, Index fan_in, bool nonneg = false) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> d(nonneg ? 0.0 : -a, a);
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = d(rng);
  };
  const auto D = static_cast<Index>(cfg.D);
  uniform(p.W_v, static_cast<Index>(cfg.X));
  {
    std::normal_distribution<double> d(0.0, 0.1);
    for (Index j = 0; j < p.W_e.cols(); ++j)
      for (Index i = 0; i < p.W_e.rows(); ++i) p.W_e(i, j) = d(rng);
  }
  for (auto* g : {&p.gru_fwd, &p.gru_bwd}) {
    uniform(g->W_ih, static_cast<Index>(cfg.E));
    uniform(g->W_hh, D);
  }
  uniform(p.pool_vis.W_ave, D);
  uniform(p.pool_vis.W_r, D);
  uniform(p.pool_vis.W_s, D);
  if (!cfg.shared_pooling) {
    uniform(p.pool_txt.W_ave, D);
    uniform(p.pool_txt.W_r, D);
    uniform(p.pool_txt.W_s, D);
  }
  uniform(p.vr.W_c, p.vr.W_c.rows());
  uniform(p.vr.W_q, D);
  uniform(p.vr.W_k, D);
  uniform(p.vr.W_R, D);
  uniform(p.vr.head_w, D, /*nonneg=*/true);
  return p;
}

}  // namespace hmrn
