#pragma once

#include "hmrn/trainer.hpp"

#include <iomanip>
#include <map>

namespace hmrn {

// Splits and settings shared by every configuration of an experiment.
struct ExperimentData {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;  // optional; enables best-epoch selection
  const Dataset* test = nullptr;
  std::uint64_t vocab_hash = 0;

  std::size_t rounds(const TrainConfig& cfg) const {
    require(train && test, "experiment needs train and test splits");
    return std::min(cfg.num_queries, test->min_queries());
  }
};

// Trains each distinct configuration once. Configurations are keyed by their
// full serialized training config, so identical rows share a model.
class ModelCache {
 public:
  explicit ModelCache(ExperimentData data, TrainLogger log = {}) : data_(data), log_(std::move(log)) {}

  const Model& get(const TrainConfig& cfg) {
    const std::string key = to_json(cfg).dump();
    auto it = models_.find(key);
    if (it == models_.end()) {
      TrainResult r = train_model(*data_.train, data_.val, cfg, data_.vocab_hash, log_);
      it = models_.emplace(key, std::move(r.checkpoint.model)).first;
    }
    return it->second;
  }

  std::size_t trained() const { return models_.size(); }

 private:
  ExperimentData data_;
  TrainLogger log_;
  std::map<std::string, Model> models_;
};

// ---------------------------------------------------------------------------
// Ablations over the similarity hierarchy.

struct LevelMask {
  bool it = false, ti = false, g = false, r = false;
  bool any() const { return it || ti || g || r; }
};

enum class TrainStrategy { Split, Joint };

struct AblationRow {
  std::string label;
  LevelMask mask;
  std::size_t steps = 3;
  IntraMode intra_mode = IntraMode::Sub;
  TrainStrategy strategy = TrainStrategy::Split;
};

struct AblationResult {
  AblationRow row;
  MetricsReport metrics;
};

// Weights of the present levels: the base α, β and 1-α-β restricted to the
// unmasked levels and renormalized to sum to one.
inline std::pair<double, double> ablation_weights(const LevelMask& mask, double alpha, double beta) {
  require(mask.any(), "ablation row masks every similarity level");
  const double wl = (mask.it || mask.ti) ? alpha : 0.0;
  const double wr = mask.r ? beta : 0.0;
  const double wg = mask.g ? 1.0 - alpha - beta : 0.0;
  const double sum = wl + wr + wg;
  require(sum > 0, "ablation row keeps only levels whose base weight is zero");
  return {wl / sum, wr / sum};
}

// Training configurations for one row: one config per ensemble member, or a
// single joint/one-directional model.
inline std::vector<TrainConfig> ablation_configs(const AblationRow& row, const TrainConfig& base) {
  const auto [a, b] = ablation_weights(row.mask, base.model.alpha, base.model.beta);
  TrainConfig cfg = base;
  cfg.model.alpha = a;
  cfg.model.beta = b;
  cfg.model.steps = row.steps;
  cfg.model.intra_mode = row.intra_mode;
  if (row.strategy == TrainStrategy::Joint) {
    require(row.mask.it && row.mask.ti, "joint training needs both local directions");
    cfg.model.direction = Direction::Joint;
    return {cfg};
  }
  std::vector<TrainConfig> out;
  if (row.mask.it || !row.mask.ti) {
    // Without a local term the direction only names the model; use it.
    cfg.model.direction = Direction::ImageText;
    out.push_back(cfg);
  }
  if (row.mask.ti) {
    cfg.model.direction = Direction::TextImage;
    out.push_back(cfg);
  }
  return out;
}

inline MetricsReport evaluate_ablation_row(const AblationRow& row, const TrainConfig& base, ModelCache& cache,
                                           const ExperimentData& data) {
  const auto cfgs = ablation_configs(row, base);
  const std::size_t rounds = data.rounds(base);
  if (cfgs.size() == 2) {
    const Model& it = cache.get(cfgs[0]);
    const Model& ti = cache.get(cfgs[1]);
    return evaluate({&it, &ti}, ScoreMode::Ensemble, *data.test, rounds);
  }
  const Model& m = cache.get(cfgs[0]);
  return evaluate({&m, &m}, validation_mode(m.config.direction), *data.test, rounds);
}

inline std::vector<AblationResult> run_ablation(const std::vector<AblationRow>& rows, const TrainConfig& base,
                                                ModelCache& cache, const ExperimentData& data) {
  for (const auto& r : rows) ablation_weights(r.mask, base.model.alpha, base.model.beta);  // fail early
  std::vector<AblationResult> out;
  for (const auto& r : rows) out.push_back({r, evaluate_ablation_row(r, base, cache, data)});
  return out;
}

// Named row sets mirroring the hierarchy, intra-mode, step-count and
// training-strategy studies.
inline std::vector<AblationRow> ablation_preset(const std::string& name) {
  auto row = [](std::string label, bool it, bool ti, bool g, bool r) {
    AblationRow a;
    a.label = std::move(label);
    a.mask = {it, ti, g, r};
    return a;
  };
  if (name == "hierarchy") {
    return {row("1", true, false, false, false), row("2", false, false, true, false),
            row("3", false, false, false, true), row("4", false, true, false, false),
            row("5", false, true, true, false),  row("6", true, false, true, false),
            row("7", false, true, true, true),   row("8", true, false, true, true),
            row("9", true, true, true, true)};
  }
  if (name == "intra-mode") {
    std::vector<AblationRow> rows;
    int k = 1;
    for (bool it : {false, true})
      for (IntraMode m : {IntraMode::Concat, IntraMode::Sub}) {
        AblationRow a = row(std::to_string(k++), it, !it, true, true);
        a.intra_mode = m;
        rows.push_back(a);
      }
    return rows;
  }
  if (name == "steps") {
    std::vector<AblationRow> rows;
    for (std::size_t s = 1; s <= 4; ++s) {
      AblationRow a = row(std::to_string(s), true, true, true, true);
      a.steps = s;
      rows.push_back(a);
    }
    return rows;
  }
  if (name == "strategy") {
    AblationRow joint = row("1", true, true, true, true);
    joint.strategy = TrainStrategy::Joint;
    return {joint, row("2", true, true, true, true)};
  }
  throw Error("unknown ablation preset: " + name + " (expected hierarchy|intra-mode|steps|strategy)");
}

inline std::string format_ablation(const std::vector<AblationResult>& rows, ReportFormat fmt) {
  std::ostringstream os;
  auto mark = [](bool b) { return b ? "x" : ""; };
  if (fmt == ReportFormat::Csv) {
    os << "method,S_IT,S_TI,S_G,S_R,steps,intra_mode,strategy,R@1,R@5,R@10,R@Sum,MR\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
      const auto& m = r.metrics;
      os << r.row.label << ',' << mark(r.row.mask.it) << ',' << mark(r.row.mask.ti) << ',' << mark(r.row.mask.g)
         << ',' << mark(r.row.mask.r) << ',' << r.row.steps << ',' << to_string(r.row.intra_mode) << ','
         << (r.row.strategy == TrainStrategy::Joint ? "joint" : "split") << ',' << m.avg_r1 << ',' << m.avg_r5
         << ',' << m.avg_r10 << ',' << m.avg_rsum << ',' << m.avg_mr << '\n';
    }
    return os.str();
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-7s %-4s %-4s %-4s %-4s %-5s %-6s %-6s %7s %7s %7s %7s %7s\n", "method", "S_IT",
                "S_TI", "S_G", "S_R", "steps", "intra", "train", "R@1", "R@5", "R@10", "R@Sum", "MR");
  os << buf;
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    std::snprintf(buf, sizeof(buf), "%-7s %-4s %-4s %-4s %-4s %-5zu %-6s %-6s %7.2f %7.2f %7.2f %7.2f %7.2f\n",
                  r.row.label.c_str(), mark(r.row.mask.it), mark(r.row.mask.ti), mark(r.row.mask.g),
                  mark(r.row.mask.r), r.row.steps, to_string(r.row.intra_mode).c_str(),
                  r.row.strategy == TrainStrategy::Joint ? "joint" : "split", m.avg_r1, m.avg_r5, m.avg_r10,
                  m.avg_rsum, m.avg_mr);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Hyperparameter sweeps.

enum class GridParam { Lambda, Tau, AlphaBeta };

inline GridParam parse_grid_param(const std::string& s) {
  if (s == "lambda") return GridParam::Lambda;
  if (s == "tau") return GridParam::Tau;
  if (s == "alpha-beta") return GridParam::AlphaBeta;
  throw Error("unknown grid parameter: " + s + " (expected lambda|tau|alpha-beta)");
}

inline std::string to_string(GridParam p) {
  switch (p) {
    case GridParam::Lambda: return "lambda";
    case GridParam::Tau: return "tau";
    case GridParam::AlphaBeta: return "alpha-beta";
  }
  return "?";
}

inline std::vector<double> default_grid_values(GridParam p) {
  switch (p) {
    case GridParam::Lambda: return {1, 5, 10, 15, 20};
    case GridParam::Tau: return {10, 20, 40, 60, 80};
    case GridParam::AlphaBeta: return {0.0, 0.2, 0.4, 0.6, 0.8};
  }
  return {};
}

// kind = "it" / "ti" for single models, "ensemble" for member pairs.
// For lambda/tau sweeps p1 is the I-T member's value and p2 the T-I
// member's; for alpha-beta p1 = α and p2 = β of an I-T model.
struct GridRow {
  std::string kind;
  double p1 = 0, p2 = 0;
  MetricsReport metrics;
};

inline std::vector<GridRow> run_grid(GridParam param, const std::vector<double>& values, const TrainConfig& base,
                                     ModelCache& cache, const ExperimentData& data) {
  require(!values.empty(), "grid: no values");
  const std::size_t rounds = data.rounds(base);
  std::vector<GridRow> rows;

  if (param == GridParam::AlphaBeta) {
    for (double a : values)
      for (double b : values) {
        if (a < 0 || b < 0 || a + b > 1.0 + 1e-12) continue;
        TrainConfig cfg = base;
        cfg.model.direction = Direction::ImageText;
        cfg.model.alpha = a;
        cfg.model.beta = b;
        const Model& m = cache.get(cfg);
        rows.push_back({"it", a, b, evaluate({&m, &m}, ScoreMode::ImageText, *data.test, rounds)});
      }
    return rows;
  }

  auto member = [&](Direction d, double v) {
    TrainConfig cfg = base;
    cfg.model.direction = d;
    if (param == GridParam::Tau) {
      cfg.tau = v;
    } else if (d == Direction::ImageText) {
      cfg.model.lambda1 = v;
    } else {
      cfg.model.lambda2 = v;
    }
    return cfg;
  };
  // Score tables per member, so each ensemble pair is a table sum.
  std::vector<ScoreTables> it_tables, ti_tables;
  for (double v : values) {
    ScoreTables t;
    add_score_tables(cache.get(member(Direction::ImageText, v)), *data.test, rounds, t);
    rows.push_back({"it", v, 0, metrics_from_tables(t, ScoreMode::ImageText)});
    it_tables.push_back(std::move(t));
  }
  for (double v : values) {
    ScoreTables t;
    add_score_tables(cache.get(member(Direction::TextImage, v)), *data.test, rounds, t);
    rows.push_back({"ti", 0, v, metrics_from_tables(t, ScoreMode::TextImage)});
    ti_tables.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values.size(); ++j) {
      ScoreTables t;
      t.ids = it_tables[i].ids;
      t.s1 = it_tables[i].s1;
      t.s2 = ti_tables[j].s2;
      rows.push_back({"ensemble", values[i], values[j], metrics_from_tables(t, ScoreMode::Ensemble)});
    }
  return rows;
}

inline std::string format_grid(GridParam param, const std::vector<GridRow>& rows, ReportFormat fmt) {
  const std::string p1 = param == GridParam::AlphaBeta ? "alpha" : (param == GridParam::Tau ? "tau_it" : "lambda1");
  const std::string p2 = param == GridParam::AlphaBeta ? "beta" : (param == GridParam::Tau ? "tau_ti" : "lambda2");
  std::ostringstream os;
  if (fmt == ReportFormat::Csv) {
    os << "kind," << p1 << ',' << p2 << ",R@1,R@5,R@10,R@Sum,MR\n";
    for (const auto& r : rows) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%s,%g,%g,%.2f,%.2f,%.2f,%.2f,%.2f\n", r.kind.c_str(), r.p1, r.p2,
                    r.metrics.avg_r1, r.metrics.avg_r5, r.metrics.avg_r10, r.metrics.avg_rsum, r.metrics.avg_mr);
      os << buf;
    }
    return os.str();
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-9s %8s %8s %7s %7s %7s %7s %7s\n", "kind", p1.c_str(), p2.c_str(), "R@1", "R@5",
                "R@10", "R@Sum", "MR");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-9s %8g %8g %7.2f %7.2f %7.2f %7.2f %7.2f\n", r.kind.c_str(), r.p1, r.p2,
                  r.metrics.avg_r1, r.metrics.avg_r5, r.metrics.avg_r10, r.metrics.avg_rsum, r.metrics.avg_mr);
    os << buf;
  }
  return os.str();
}

}  // namespace hmrn
