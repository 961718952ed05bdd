#pragma once

#include "hmrn/checkpoint.hpp"
#include "hmrn/dataset.hpp"
#include "hmrn/model.hpp"
#include "hmrn/objective.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

namespace hmrn {

// it: S1 of the image-text model. ti: S2 of the text-image model.
// ensemble: S1 + S2. A joint model may serve as both members.
enum class ScoreMode { ImageText, TextImage, Ensemble };

inline std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::ImageText: return "it";
    case ScoreMode::TextImage: return "ti";
    case ScoreMode::Ensemble: return "ensemble";
  }
  return "?";
}

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "it") return ScoreMode::ImageText;
  if (s == "ti") return ScoreMode::TextImage;
  if (s == "ensemble") return ScoreMode::Ensemble;
  throw Error("unknown score mode: " + s + " (expected it|ti|ensemble)");
}

struct RetrievalModels {
  const Model* it = nullptr;  // provides S1
  const Model* ti = nullptr;  // provides S2

  void check(ScoreMode mode) const {
    if (mode != ScoreMode::TextImage && (!it || !it->uses_it()))
      throw Error("missing checkpoint: image-text model required for mode " + to_string(mode));
    if (mode != ScoreMode::ImageText && (!ti || !ti->uses_ti()))
      throw Error("missing checkpoint: text-image model required for mode " + to_string(mode));
  }
};

inline double s1_of(const Model& m, const PairScores& s) {
  return aggregate_similarity(s.s_it, s.s_r, s.s_g, m.config.alpha, m.config.beta);
}
inline double s2_of(const Model& m, const PairScores& s) {
  return aggregate_similarity(s.s_ti, s.s_r, s.s_g, m.config.alpha, m.config.beta);
}

// Cached per-image encodings for each model a gallery is scored with.
struct GalleryEncoding {
  std::vector<std::string> ids;
  std::vector<ImageEncoding> it, ti;
};

inline GalleryEncoding encode_gallery(const Dataset& gallery, const RetrievalModels& models) {
  GalleryEncoding g;
  for (const auto& r : gallery.records) {
    g.ids.push_back(r.regions.image_id);
    if (models.it) g.it.push_back(encode_image(r.regions.features, models.it->params));
    if (models.ti) {
      if (models.ti == models.it) {
        g.ti.push_back(g.it.back());
      } else {
        g.ti.push_back(encode_image(r.regions.features, models.ti->params));
      }
    }
  }
  return g;
}

// Query-side representations of a query list, one per model.
struct QueryRows {
  Matrix it, ti;
};

inline QueryRows encode_query_list(std::span<const std::vector<TokenId>> queries, const RetrievalModels& models) {
  QueryRows q;
  if (models.it) q.it = encode_query_rows(queries, models.it->params);
  if (models.ti) q.ti = models.ti == models.it ? q.it : encode_query_rows(queries, models.ti->params);
  return q;
}

// Scores every gallery image against the first `rounds` queries.
inline Vector score_gallery(const RetrievalModels& models, ScoreMode mode, const GalleryEncoding& g,
                            const QueryRows& q, std::size_t rounds) {
  models.check(mode);
  const bool want_it = mode != ScoreMode::TextImage;
  const bool want_ti = mode != ScoreMode::ImageText;
  const bool same = models.it == models.ti;
  QuerySetEncoding qi, qt;
  if (want_it) qi = pool_query_prefix(q.it, rounds, models.it->params);
  if (want_ti) qt = same && want_it ? qi : pool_query_prefix(q.ti, rounds, models.ti->params);
  Vector scores(static_cast<Index>(g.ids.size()));
  for (std::size_t k = 0; k < g.ids.size(); ++k) {
    double s = 0;
    if (want_it) {
      const auto& e = g.it[k];
      const PairScores ps = score_pair(*models.it, e.V_loc, e.v_glo, qi.T_loc, qi.t_glo);
      s += s1_of(*models.it, ps);
      if (want_ti && same) s += s2_of(*models.ti, ps);
    }
    if (want_ti && !(same && want_it)) {
      const auto& e = g.ti[k];
      const PairScores ps = score_pair(*models.ti, e.V_loc, e.v_glo, qt.T_loc, qt.t_glo);
      s += s2_of(*models.ti, ps);
    }
    scores(static_cast<Index>(k)) = s;
  }
  return scores;
}

struct RoundRanking {
  std::string query_image_id;
  std::size_t round = 0;
  std::vector<std::string> ranked_ids;  // score desc, ties by ascending image_id
  std::vector<double> ranked_scores;
  std::size_t rank_of_target = 0;  // 1-based; 0 when the target is not in the gallery
};

inline std::vector<std::size_t> ranking_order(const std::vector<std::string>& ids, const Vector& scores) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = scores(static_cast<Index>(a)), sb = scores(static_cast<Index>(b));
    if (sa != sb) return sa > sb;
    return ids[a] < ids[b];
  });
  return order;
}

inline RoundRanking make_ranking(const std::vector<std::string>& ids, const Vector& scores,
                                 const std::string& target, std::size_t round) {
  RoundRanking r;
  r.query_image_id = target;
  r.round = round;
  for (std::size_t k : ranking_order(ids, scores)) {
    r.ranked_ids.push_back(ids[k]);
    r.ranked_scores.push_back(scores(static_cast<Index>(k)));
    if (ids[k] == target) r.rank_of_target = r.ranked_ids.size();
  }
  return r;
}

inline RoundRanking rank_gallery(std::span<const std::vector<TokenId>> queries, std::size_t round,
                                 const GalleryEncoding& gallery, const RetrievalModels& models, ScoreMode mode,
                                 const std::string& target_id = {}) {
  require(!gallery.ids.empty(), "rank_gallery: empty gallery");
  require(round >= 1 && round <= queries.size(), "rank_gallery: round out of range");
  const QueryRows q = encode_query_list(queries.first(round), models);
  return make_ranking(gallery.ids, score_gallery(models, mode, gallery, q, round), target_id, round);
}

inline RoundRanking rank_gallery(std::span<const std::vector<TokenId>> queries, std::size_t round,
                                 const Dataset& gallery, const RetrievalModels& models, ScoreMode mode,
                                 const std::string& target_id = {}) {
  return rank_gallery(queries, round, encode_gallery(gallery, models), models, mode, target_id);
}

// ---------------------------------------------------------------------------
// Metrics

struct RoundMetrics {
  double r1 = 0, r5 = 0, r10 = 0, mr = 0;
};

struct MetricsReport {
  std::vector<RoundMetrics> rounds;
  double avg_r1 = 0, avg_r5 = 0, avg_r10 = 0, avg_rsum = 0, avg_mr = 0;
};

// ranks[q][r-1] = 1-based rank of record q's target at round r.
inline MetricsReport compute_metrics(const std::vector<std::vector<std::size_t>>& ranks, std::size_t rounds) {
  require(!ranks.empty(), "compute_metrics: no rankings");
  require(rounds >= 1, "compute_metrics: rounds must be >= 1");
  for (const auto& r : ranks) {
    if (r.size() < rounds) throw Error("compute_metrics: missing round for a test record");
    for (std::size_t i = 0; i < rounds; ++i) require(r[i] >= 1, "compute_metrics: ranks are 1-based");
  }
  MetricsReport rep;
  const double n = static_cast<double>(ranks.size());
  for (std::size_t round = 0; round < rounds; ++round) {
    RoundMetrics m;
    double hit1 = 0, hit5 = 0, hit10 = 0, sum = 0;
    for (const auto& r : ranks) {
      const auto k = r[round];
      hit1 += k <= 1;
      hit5 += k <= 5;
      hit10 += k <= 10;
      sum += static_cast<double>(k);
    }
    m.r1 = 100.0 * hit1 / n;
    m.r5 = 100.0 * hit5 / n;
    m.r10 = 100.0 * hit10 / n;
    m.mr = sum / n;
    rep.rounds.push_back(m);
  }
  for (const auto& m : rep.rounds) {
    rep.avg_r1 += m.r1;
    rep.avg_r5 += m.r5;
    rep.avg_r10 += m.r10;
    rep.avg_mr += m.mr;
  }
  const double R = static_cast<double>(rounds);
  rep.avg_r1 /= R;
  rep.avg_r5 /= R;
  rep.avg_r10 /= R;
  rep.avg_mr /= R;
  rep.avg_rsum = rep.avg_r1 + rep.avg_r5 + rep.avg_r10;
  return rep;
}

// Score tables over a test split: table[r-1](q, k) scores gallery image k
// against the first r queries of record q. The gallery is the split itself.
struct ScoreTables {
  std::vector<std::string> ids;
  std::vector<Matrix> s1, s2;  // filled for the models that provide them

  std::vector<Matrix> combined(ScoreMode mode) const {
    if (mode == ScoreMode::ImageText) return s1;
    if (mode == ScoreMode::TextImage) return s2;
    require(s1.size() == s2.size(), "ensemble needs both score tables");
    std::vector<Matrix> out;
    for (std::size_t r = 0; r < s1.size(); ++r) out.push_back(s1[r] + s2[r]);
    return out;
  }
};

template <typename F>
void parallel_for(std::size_t n, F&& f, std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) f(i);
    });
  for (auto& th : pool) th.join();
}

// Adds this model's S1 and/or S2 tables to `out`.
inline void add_score_tables(const Model& m, const Dataset& data, std::size_t rounds, ScoreTables& out) {
  require(!data.records.empty(), "score tables: empty dataset");
  require(data.min_queries() >= rounds, "score tables: records have fewer queries than rounds");
  const std::size_t n = data.size();
  if (out.ids.empty())
    for (const auto& r : data.records) out.ids.push_back(r.regions.image_id);
  std::vector<ImageEncoding> images(n);
  std::vector<Matrix> qrows(n);
  for (std::size_t i = 0; i < n; ++i) {
    images[i] = encode_image(data.records[i].regions.features, m.params);
    std::span<const std::vector<TokenId>> qs(data.records[i].queries.queries);
    qrows[i] = encode_query_rows(qs.first(rounds), m.params);
  }
  std::vector<Matrix> t1, t2;
  const auto N = static_cast<Index>(n);
  if (m.uses_it()) t1.assign(rounds, Matrix(N, N));
  if (m.uses_ti()) t2.assign(rounds, Matrix(N, N));
  parallel_for(n, [&](std::size_t q) {
    for (std::size_t r = 1; r <= rounds; ++r) {
      const QuerySetEncoding qe = pool_query_prefix(qrows[q], r, m.params);
      for (std::size_t k = 0; k < n; ++k) {
        const PairScores ps = score_pair(m, images[k].V_loc, images[k].v_glo, qe.T_loc, qe.t_glo);
        if (m.uses_it()) t1[r - 1](static_cast<Index>(q), static_cast<Index>(k)) = s1_of(m, ps);
        if (m.uses_ti()) t2[r - 1](static_cast<Index>(q), static_cast<Index>(k)) = s2_of(m, ps);
      }
    }
  });
  if (m.uses_it()) out.s1 = std::move(t1);
  if (m.uses_ti()) out.s2 = std::move(t2);
}

// Rank of the target (the record's own image, column q) under the gallery
// tie-break rule.
inline std::vector<std::vector<std::size_t>> target_ranks(const std::vector<Matrix>& tables,
                                                          const std::vector<std::string>& ids) {
  const std::size_t n = ids.size();
  std::vector<std::vector<std::size_t>> ranks(n, std::vector<std::size_t>(tables.size()));
  for (std::size_t r = 0; r < tables.size(); ++r) {
    for (std::size_t q = 0; q < n; ++q) {
      const double t = tables[r](static_cast<Index>(q), static_cast<Index>(q));
      std::size_t rank = 1;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == q) continue;
        const double s = tables[r](static_cast<Index>(q), static_cast<Index>(k));
        if (s > t || (s == t && ids[k] < ids[q])) ++rank;
      }
      ranks[q][r] = rank;
    }
  }
  return ranks;
}

inline MetricsReport metrics_from_tables(const ScoreTables& t, ScoreMode mode) {
  const auto tables = t.combined(mode);
  return compute_metrics(target_ranks(tables, t.ids), tables.size());
}

inline MetricsReport evaluate(const RetrievalModels& models, ScoreMode mode, const Dataset& data,
                              std::size_t rounds) {
  models.check(mode);
  ScoreTables t;
  if (mode != ScoreMode::TextImage) add_score_tables(*models.it, data, rounds, t);
  // A joint model serving as both members already filled both tables.
  const bool ti_done = mode == ScoreMode::Ensemble && models.ti == models.it;
  if (mode != ScoreMode::ImageText && !ti_done) {
    ScoreTables t2;
    add_score_tables(*models.ti, data, rounds, t2);
    t.s2 = std::move(t2.s2);
    if (t.ids.empty()) t.ids = std::move(t2.ids);
  }
  return metrics_from_tables(t, mode);
}

// ---------------------------------------------------------------------------
// Report emission

enum class ReportFormat { Csv, Text };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "text") return ReportFormat::Text;
  throw Error("unknown report format: " + s + " (expected csv|text)");
}

inline std::string format_report(const MetricsReport& rep, ReportFormat fmt) {
  std::ostringstream os;
  char buf[160];
  if (fmt == ReportFormat::Csv) {
    os << "round,R@1,R@5,R@10,MR\n";
    for (std::size_t r = 0; r < rep.rounds.size(); ++r) {
      const auto& m = rep.rounds[r];
      std::snprintf(buf, sizeof buf, "%zu,%.4f,%.4f,%.4f,%.4f\n", r + 1, m.r1, m.r5, m.r10, m.mr);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "avg,%.4f,%.4f,%.4f,%.4f\n", rep.avg_r1, rep.avg_r5, rep.avg_r10, rep.avg_mr);
    os << buf;
  } else {
    std::snprintf(buf, sizeof buf, "%-6s %7s %7s %7s %8s\n", "round", "R@1", "R@5", "R@10", "MR");
    os << buf;
    for (std::size_t r = 0; r < rep.rounds.size(); ++r) {
      const auto& m = rep.rounds[r];
      std::snprintf(buf, sizeof buf, "%-6zu %7.1f %7.1f %7.1f %8.1f\n", r + 1, m.r1, m.r5, m.r10, m.mr);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-6s %7.1f %7.1f %7.1f %8.1f\n", "avg", rep.avg_r1, rep.avg_r5, rep.avg_r10,
                  rep.avg_mr);
    os << buf;
    std::snprintf(buf, sizeof buf, "Avg R@Sum %.1f\n", rep.avg_rsum);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Parameter counting

struct ParameterCount {
  std::size_t total = 0;
  std::size_t without_embedding = 0;
  std::map<std::string, std::size_t> per_module;
};

inline std::string module_of(const std::string& name) {
  if (name == "W_v" || name == "b_v") return "visual_projection";
  if (name == "W_e") return "word_embedding";
  if (name.rfind("gru_", 0) == 0) return "text_gru";
  if (name.rfind("pool_", 0) == 0) return "global_pooling";
  if (name.rfind("vr.", 0) == 0) return "vector_reasoning";
  return "other";
}

inline ParameterCount count_parameters(const ModelParams& p) {
  ParameterCount c;
  for_each_named(p, [&](const std::string& name, const Matrix& m) {
    const auto n = static_cast<std::size_t>(m.size());
    c.total += n;
    if (name != "W_e") c.without_embedding += n;
    c.per_module[module_of(name)] += n;
  });
  return c;
}

inline ParameterCount count_parameters(const Checkpoint& ck) { return count_parameters(ck.model.params); }

}  // namespace hmrn
