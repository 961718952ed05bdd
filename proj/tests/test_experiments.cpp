#include "hmrn/experiments.hpp"
#include "hmrn/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hmrn;

namespace {

struct Splits {
  SyntheticData train, test;
  ExperimentData data() const { return {&train.dataset, nullptr, &test.dataset, train.vocab.hash()}; }
};

Splits tiny_splits() {
  SyntheticConfig sc;
  sc.num_scenes = 12;
  sc.K = 3;
  sc.N = 2;
  sc.X = 6;
  sc.seed = 1;
  Splits s{generate_synthetic_dataset(sc), {}};
  sc.num_scenes = 6;
  sc.seed = 2;
  sc.split = Split::Test;
  sc.id_prefix = "t";
  s.test = generate_synthetic_dataset(sc);
  return s;
}

TrainConfig tiny_base(const Splits& s) {
  TrainConfig tc;
  tc.model.X = 6;
  tc.model.E = 4;
  tc.model.D = 4;
  tc.model.vocab_size = s.train.vocab.size();
  tc.epochs = 1;
  tc.batch_size = 6;
  tc.num_queries = 2;
  tc.lr = 1e-3;
  return tc;
}

bool all_finite(const MetricsReport& m) {
  return std::isfinite(m.avg_r1) && std::isfinite(m.avg_r5) && std::isfinite(m.avg_r10) &&
         std::isfinite(m.avg_rsum) && std::isfinite(m.avg_mr);
}

}  // namespace

TEST(AblationWeights, RestrictAndRenormalizeTheBaseWeights) {
  auto w = ablation_weights({false, false, true, false}, 0.4, 0.4);
  EXPECT_EQ(w.first, 0.0);
  EXPECT_EQ(w.second, 0.0);  // S_G only: alpha = beta = 0
  w = ablation_weights({true, true, true, true}, 0.4, 0.4);
  EXPECT_NEAR(w.first, 0.4, 1e-15);
  EXPECT_NEAR(w.second, 0.4, 1e-15);
  w = ablation_weights({true, false, false, false}, 0.4, 0.4);
  EXPECT_EQ(w.first, 1.0);
  EXPECT_EQ(w.second, 0.0);
  w = ablation_weights({false, true, true, false}, 0.4, 0.4);
  EXPECT_NEAR(w.first, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.second, 0.0, 1e-15);
  w = ablation_weights({false, false, true, true}, 0.4, 0.4);
  EXPECT_NEAR(w.first, 0.0, 1e-15);
  EXPECT_NEAR(w.second, 2.0 / 3.0, 1e-15);
}

TEST(AblationWeights, Errors) {
  EXPECT_THROW(ablation_weights({}, 0.4, 0.4), Error);
  EXPECT_THROW(ablation_weights({false, false, false, true}, 0.4, 0.0), Error);
}

TEST(AblationConfigs, MembersFollowTheMask) {
  TrainConfig base;
  base.model.vocab_size = 5;
  const auto both = ablation_configs({"9", {true, true, true, true}}, base);
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(both[0].model.direction, Direction::ImageText);
  EXPECT_EQ(both[1].model.direction, Direction::TextImage);
  const auto ti = ablation_configs({"4", {false, true, false, false}}, base);
  ASSERT_EQ(ti.size(), 1u);
  EXPECT_EQ(ti[0].model.direction, Direction::TextImage);
  EXPECT_EQ(ti[0].model.alpha, 1.0);
  const auto g = ablation_configs({"2", {false, false, true, false}}, base);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].model.alpha, 0.0);
  EXPECT_EQ(g[0].model.beta, 0.0);
  AblationRow joint{"j", {true, true, true, true}};
  joint.strategy = TrainStrategy::Joint;
  const auto j = ablation_configs(joint, base);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].model.direction, Direction::Joint);
  joint.mask.ti = false;
  EXPECT_THROW(ablation_configs(joint, base), Error);
}

TEST(AblationPreset, RowCounts) {
  EXPECT_EQ(ablation_preset("hierarchy").size(), 9u);
  EXPECT_EQ(ablation_preset("intra-mode").size(), 4u);
  EXPECT_EQ(ablation_preset("steps").size(), 4u);
  EXPECT_EQ(ablation_preset("strategy").size(), 2u);
  EXPECT_THROW(ablation_preset("table-6"), Error);
  const auto h = ablation_preset("hierarchy");
  EXPECT_TRUE(h.back().mask.it && h.back().mask.ti && h.back().mask.g && h.back().mask.r);
}

TEST(RunAblation, HierarchyEmitsOneFiniteRowPerConfigurationAndReusesModels) {
  const auto s = tiny_splits();
  ModelCache cache(s.data());
  const auto rows = run_ablation(ablation_preset("hierarchy"), tiny_base(s), cache, s.data());
  ASSERT_EQ(rows.size(), 9u);
  for (const auto& r : rows) EXPECT_TRUE(all_finite(r.metrics)) << r.row.label;
  // Row 9's ensemble members are exactly the full models of rows 7 and 8.
  EXPECT_EQ(cache.trained(), 8u);
  const auto csv = format_ablation(rows, ReportFormat::Csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,S_IT,S_TI,S_G,S_R,steps,intra_mode,strategy,R@1,R@5,R@10,R@Sum,MR");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  EXPECT_NE(format_ablation(rows, ReportFormat::Text).find("R@Sum"), std::string::npos);
}

TEST(RunAblation, SameSeedGivesIdenticalRows) {
  const auto s = tiny_splits();
  const std::vector<AblationRow> rows{{"6", {true, false, true, false}}};
  ModelCache a(s.data()), b(s.data());
  const auto ra = run_ablation(rows, tiny_base(s), a, s.data());
  const auto rb = run_ablation(rows, tiny_base(s), b, s.data());
  EXPECT_EQ(format_ablation(ra, ReportFormat::Csv), format_ablation(rb, ReportFormat::Csv));
}

TEST(RunAblation, AllMaskedRowFailsBeforeAnyTraining) {
  const auto s = tiny_splits();
  ModelCache cache(s.data());
  const std::vector<AblationRow> rows{{"ok", {true, false, false, false}}, {"bad", {}}};
  EXPECT_THROW(run_ablation(rows, tiny_base(s), cache, s.data()), Error);
  EXPECT_EQ(cache.trained(), 0u);
}

TEST(RunGrid, LambdaSweepShapesAndFiniteness) {
  const auto s = tiny_splits();
  ModelCache cache(s.data());
  const auto rows = run_grid(GridParam::Lambda, {1, 5, 10}, tiny_base(s), cache, s.data());
  ASSERT_EQ(rows.size(), 3u + 3u + 9u);
  std::size_t ensembles = 0;
  for (const auto& r : rows) {
    EXPECT_TRUE(all_finite(r.metrics));
    ensembles += r.kind == "ensemble";
  }
  EXPECT_EQ(ensembles, 9u);
  EXPECT_EQ(cache.trained(), 6u);
  const auto csv = format_grid(GridParam::Lambda, rows, ReportFormat::Csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "kind,lambda1,lambda2,R@1,R@5,R@10,R@Sum,MR");
}

TEST(RunGrid, EnsembleRowEqualsDirectEnsembleEvaluation) {
  const auto s = tiny_splits();
  ModelCache cache(s.data());
  const auto base = tiny_base(s);
  const auto rows = run_grid(GridParam::Tau, {10, 40}, base, cache, s.data());
  TrainConfig it = base, ti = base;
  it.model.direction = Direction::ImageText;
  it.tau = 40;
  ti.model.direction = Direction::TextImage;
  ti.tau = 10;
  const auto direct = evaluate({&cache.get(it), &cache.get(ti)}, ScoreMode::Ensemble, s.test.dataset, 2);
  bool found = false;
  for (const auto& r : rows)
    if (r.kind == "ensemble" && r.p1 == 40 && r.p2 == 10) {
      found = true;
      EXPECT_EQ(r.metrics.avg_rsum, direct.avg_rsum);
      EXPECT_EQ(r.metrics.avg_mr, direct.avg_mr);
    }
  EXPECT_TRUE(found);
}

TEST(RunGrid, AlphaBetaKeepsOnlyValidPairs) {
  const auto s = tiny_splits();
  ModelCache cache(s.data());
  const auto rows = run_grid(GridParam::AlphaBeta, {0.0, 0.5, 1.0}, tiny_base(s), cache, s.data());
  EXPECT_EQ(rows.size(), 6u);
  for (const auto& r : rows) EXPECT_LE(r.p1 + r.p2, 1.0);
  EXPECT_THROW(parse_grid_param("gamma"), Error);
  EXPECT_EQ(default_grid_values(GridParam::Lambda), (std::vector<double>{1, 5, 10, 15, 20}));
}
