#pragma once

#include "hmrn/adam.hpp"
#include "hmrn/batching.hpp"
#include "hmrn/checkpoint.hpp"
#include "hmrn/config.hpp"
#include "hmrn/evaluation.hpp"
#include "hmrn/objective.hpp"

#include <functional>
#include <optional>

namespace hmrn {

// Encodes one batch. Query rows are encoded at their true lengths from the
// padded token matrix.
struct EncodedBatch {
  std::vector<ImageEncoding> images;
  std::vector<QuerySetEncoding> queries;
};

inline EncodedBatch encode_batch(const Model& m, const Dataset& data, const Batch& b, bool keep_cache) {
  EncodedBatch eb;
  for (std::size_t i = 0; i < b.size(); ++i) {
    eb.images.push_back(encode_image(data.records[b.indices[i]].regions.features, m.params));
    const auto& pq = b.queries[i];
    QuerySetEncoding qe;
    std::vector<QueryCache> caches(keep_cache ? pq.rounds() : 0);
    Matrix T(static_cast<Index>(pq.rounds()), static_cast<Index>(m.config.D));
    for (std::size_t q = 0; q < pq.rounds(); ++q) {
      const auto* row = pq.tokens.row(static_cast<Index>(q)).data();
      std::span<const TokenId> toks(row, static_cast<std::size_t>(pq.tokens.cols()));
      T.row(static_cast<Index>(q)) =
          encode_query(toks, pq.lengths[q], m.params, keep_cache ? &caches[q] : nullptr).transpose();
    }
    qe = pool_query_prefix(T, pq.rounds(), m.params);
    qe.caches = std::move(caches);
    eb.queries.push_back(std::move(qe));
  }
  return eb;
}

// In-batch similarity matrices; entry (a, b) scores image a against queryset b.
struct BatchSimilarity {
  Matrix s_it, s_ti, s_r, s_g;
};

inline BatchSimilarity batch_similarity(const Model& m, const EncodedBatch& eb) {
  const auto n = static_cast<Index>(eb.images.size());
  require(n >= 1, "batch_similarity: empty batch");
  require(eb.queries.size() == eb.images.size(), "batch_similarity: images and querysets differ in count");
  BatchSimilarity s{Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
  for (Index a = 0; a < n; ++a) {
    const auto& img = eb.images[static_cast<std::size_t>(a)];
    for (Index b = 0; b < n; ++b) {
      const auto& q = eb.queries[static_cast<std::size_t>(b)];
      const PairScores ps = score_pair(m, img.V_loc, img.v_glo, q.T_loc, q.t_glo);
      s.s_it(a, b) = ps.s_it;
      s.s_ti(a, b) = ps.s_ti;
      s.s_r(a, b) = ps.s_r;
      s.s_g(a, b) = ps.s_g;
    }
  }
  return s;
}

inline BatchSimilarity batch_similarity(const Model& m, const Dataset& data, const Batch& b) {
  return batch_similarity(m, encode_batch(m, data, b, false));
}

struct LossBreakdown {
  double total = 0;
  double local_it = 0, local_ti = 0, reason = 0, global = 0;
};

// Weighted multi-level InfoNCE for one batch. For a joint model the loss is
// the mean of the two directions' totals. When `grad` is non-null it is
// filled with dL/dparams (overwritten).
inline LossBreakdown batch_loss(const Model& m, const Dataset& data, const Batch& b, double tau,
                                ModelParams* grad = nullptr) {
  const auto& cfg = m.config;
  const double alpha = cfg.alpha, beta = cfg.beta, gamma = cfg.gamma();
  const EncodedBatch eb = encode_batch(m, data, b, grad != nullptr);
  const BatchSimilarity sim = batch_similarity(m, eb);
  const auto n = static_cast<Index>(b.size());

  LossBreakdown out;
  Matrix g_it = Matrix::Zero(n, n), g_ti = Matrix::Zero(n, n), g_r = Matrix::Zero(n, n), g_g = Matrix::Zero(n, n);
  Matrix tmp;
  if (m.uses_it() && alpha > 0) {
    out.local_it = infonce_loss(sim.s_it, tau, &tmp);
    g_it = alpha * tmp;
  }
  if (m.uses_ti() && alpha > 0) {
    out.local_ti = infonce_loss(sim.s_ti, tau, &tmp);
    g_ti = alpha * tmp;
  }
  if (beta > 0) {
    out.reason = infonce_loss(sim.s_r, tau, &tmp);
    g_r = beta * tmp;
  }
  if (gamma > 0) {
    out.global = infonce_loss(sim.s_g, tau, &tmp);
    g_g = gamma * tmp;
  }
  const double shared = beta * out.reason + gamma * out.global;
  if (cfg.direction == Direction::Joint) {
    out.total = 0.5 * ((alpha * out.local_it + shared) + (alpha * out.local_ti + shared));
    g_it *= 0.5;
    g_ti *= 0.5;
    g_r = 0.5 * (g_r + g_r);
    g_g = 0.5 * (g_g + g_g);
  } else if (cfg.direction == Direction::ImageText) {
    out.total = alpha * out.local_it + shared;
  } else {
    out.total = alpha * out.local_ti + shared;
  }
  if (!std::isfinite(out.total)) throw Error("non-finite loss");
  if (!grad) return out;

  *grad = zeros_like(m.params);
  std::vector<Matrix> dV(b.size()), dT(b.size());
  std::vector<Vector> dv(b.size()), dt(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    dV[i] = Matrix::Zero(eb.images[i].V_loc.rows(), eb.images[i].V_loc.cols());
    dv[i] = Vector::Zero(eb.images[i].v_glo.size());
    dT[i] = Matrix::Zero(eb.queries[i].T_loc.rows(), eb.queries[i].T_loc.cols());
    dt[i] = Vector::Zero(eb.queries[i].t_glo.size());
  }
  PairCache cache;
  for (Index a = 0; a < n; ++a) {
    const auto ia = static_cast<std::size_t>(a);
    const auto& img = eb.images[ia];
    for (Index bb = 0; bb < n; ++bb) {
      const auto ib = static_cast<std::size_t>(bb);
      const PairScores d{g_it(a, bb), g_ti(a, bb), g_g(a, bb), g_r(a, bb)};
      if (d.s_it == 0.0 && d.s_ti == 0.0 && d.s_g == 0.0 && d.s_r == 0.0) continue;
      const auto& q = eb.queries[ib];
      score_pair(m, img.V_loc, img.v_glo, q.T_loc, q.t_glo, &cache);
      const PairGrads pg = score_pair_backward(m, img.V_loc, img.v_glo, q.T_loc, q.t_glo, cache, d, *grad);
      dV[ia] += pg.dV_loc;
      dv[ia] += pg.dv_glo;
      dT[ib] += pg.dT_loc;
      dt[ib] += pg.dt_glo;
    }
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    encode_image_backward(data.records[b.indices[i]].regions.features, m.params, eb.images[i], std::move(dV[i]),
                          dv[i], *grad);
    encode_queryset_backward(m.params, eb.queries[i], std::move(dT[i]), dt[i], *grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  std::size_t epoch = 0;  // 0 = before any update
  double lr = 0;
  double mean_loss = 0;
  std::optional<MetricsReport> val;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

using TrainLogger = std::function<void(const EpochStats&)>;

inline ScoreMode validation_mode(Direction d) {
  switch (d) {
    case Direction::ImageText: return ScoreMode::ImageText;
    case Direction::TextImage: return ScoreMode::TextImage;
    case Direction::Joint: return ScoreMode::Ensemble;
  }
  return ScoreMode::Ensemble;
}

inline MetricsReport evaluate_single(const Model& m, const Dataset& data, std::size_t rounds) {
  return evaluate({&m, &m}, validation_mode(m.config.direction), data, rounds);
}

inline nlohmann::json history_json(const std::vector<EpochStats>& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h) {
    nlohmann::json j{{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}};
    if (e.val) j["val"] = {{"avg_r1", e.val->avg_r1}, {"avg_rsum", e.val->avg_rsum}, {"avg_mr", e.val->avg_mr}};
    arr.push_back(std::move(j));
  }
  return arr;
}

inline TrainResult train_model(const Dataset& train, const Dataset* val, const TrainConfig& cfg,
                               std::uint64_t vocab_hash, const TrainLogger& log = {}) {
  cfg.validate();
  require(!train.records.empty(), "train_model: empty training split");
  Model model = Model::initialized(cfg.model, cfg.seed);
  Adam adam(model.params);

  BatchOptions bo;
  bo.batch_size = cfg.batch_size;
  bo.shuffle = true;
  bo.randomize_queries = true;
  bo.num_queries = cfg.num_queries;
  bo.seed = cfg.seed;
  BatchIterator batches(train, bo);

  const bool use_val = val && !val->records.empty();
  const std::size_t val_rounds = use_val ? std::min(cfg.num_queries, val->min_queries()) : 0;

  TrainResult res;
  ModelParams best = model.params;
  double best_score = -1;
  EpochStats e0;
  if (use_val) {
    e0.val = evaluate_single(model, *val, val_rounds);
    best_score = e0.val->avg_rsum;
  }
  res.history.push_back(e0);
  if (log) log(e0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.lr = cfg.lr_at(epoch - 1);
    double loss_sum = 0;
    std::size_t count = 0;
    ModelParams grad;
    for (const Batch& b : batches.next_epoch()) {
      LossBreakdown lb;
      try {
        lb = batch_loss(model, train, b, cfg.tau, &grad);
      } catch (const Error& e) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(count) +
                    ": " + e.what());
      }
      const double gnorm = clip_global_norm(grad, cfg.grad_clip);
      if (!std::isfinite(gnorm))
        throw Error("training diverged at epoch " + std::to_string(epoch) + ": non-finite gradient");
      adam.step(model.params, grad, st.lr);
      loss_sum += lb.total;
      ++count;
    }
    st.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(count, 1));
    if (use_val) {
      st.val = evaluate_single(model, *val, val_rounds);
      if (st.val->avg_rsum > best_score) {
        best_score = st.val->avg_rsum;
        best = model.params;
        res.best_epoch = epoch;
      }
    }
    res.history.push_back(st);
    if (log) log(st);
  }
  if (!(cfg.select_on_val && use_val)) {
    best = model.params;
    res.best_epoch = cfg.epochs;
  }
  model.params = std::move(best);
  res.checkpoint.model = std::move(model);
  res.checkpoint.vocab_hash = vocab_hash;
  res.checkpoint.metadata = {{"train_config", to_json(cfg)},
                             {"best_epoch", res.best_epoch},
                             {"history", history_json(res.history)}};
  return res;
}

// Single model trained on both directions' losses.
inline TrainResult joint_train_mode(const Dataset& train, const Dataset* val, TrainConfig cfg,
                                    std::uint64_t vocab_hash, const TrainLogger& log = {}) {
  cfg.model.direction = Direction::Joint;
  return train_model(train, val, cfg, vocab_hash, log);
}

}  // namespace hmrn
