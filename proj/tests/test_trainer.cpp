#include <gtest/gtest.h>

#include "coda/io.hpp"
#include "tiny_config.hpp"

using namespace coda;

namespace {

std::string csv(const std::vector<MetricsRow>& rows) {
  std::string s = io::kMetricsHeader;
  s += '\n';
  for (const auto& r : rows) s += io::metrics_line(r);
  return s;
}

struct Recorder : RunObserver {
  std::vector<int> metric_epochs;
  std::vector<int> pool_epochs;
  std::vector<std::size_t> pool_sizes;
  void on_metrics(const MetricsRow& r) override { metric_epochs.push_back(r.epoch); }
  void on_pool_update(int epoch, const LabelPool& pool, const DiscoveryReport&) override {
    pool_epochs.push_back(epoch);
    pool_sizes.push_back(pool.novel_size());
  }
};

}  // namespace

TEST(Train, DeterministicUnderFixedSeed) {
  const TrainConfig cfg = tiny_config();
  const Dataset ds = generate_dataset(cfg.world);
  const RunArtifacts a = train(cfg, ds), b = train(cfg, ds);
  EXPECT_EQ(csv(a.history), csv(b.history));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.pool, b.pool);
}

TEST(Train, SeedChangesRun) {
  TrainConfig cfg = tiny_config();
  const Dataset ds = generate_dataset(cfg.world);
  const RunArtifacts a = train(cfg, ds);
  cfg.seed = 2;
  EXPECT_NE(a.params, train(cfg, ds).params);
}

TEST(Train, ScheduleAndObserver) {
  const TrainConfig cfg = tiny_config();
  const Dataset ds = generate_dataset(cfg.world);
  Recorder rec;
  const RunArtifacts r = train(cfg, ds, &rec);
  EXPECT_EQ(rec.metric_epochs, (std::vector<int>{2, 4, 6, 8}));
  EXPECT_EQ(rec.pool_epochs, (std::vector<int>{5, 7}));
  ASSERT_EQ(r.history.size(), 4u);
  EXPECT_EQ(r.history[0].pool_size, 0u);
  EXPECT_EQ(r.history[1].pool_size, 0u);
  EXPECT_EQ(r.steps, 8 * 3);
  for (std::size_t i = 1; i < rec.pool_sizes.size(); ++i) EXPECT_GE(rec.pool_sizes[i], rec.pool_sizes[i - 1]);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_GE(r.history[i].pool_size, r.history[i - 1].pool_size);
  for (const auto& row : r.history) {
    EXPECT_GE(row.ap_mean, 0.0);
    EXPECT_LE(row.ar_mean, 1.0);
  }
}

TEST(Train, BasePoolNeverChanges) {
  const TrainConfig cfg = tiny_config();
  const Dataset ds = generate_dataset(cfg.world);
  const RunArtifacts r = train(cfg, ds);
  const LabelPool start = LabelPool::from_scenes(ds.train);
  for (const Scene& s : ds.train) EXPECT_EQ(r.pool.base(s.scene_id), start.base(s.scene_id));
}

TEST(Train, SaturatedGatesNeverGrowPool) {
  TrainConfig cfg = tiny_config();
  cfg.discovery.objectness_threshold = cfg.discovery.semantic_threshold = 1.0;
  const Dataset ds = generate_dataset(cfg.world);
  const RunArtifacts r = train(cfg, ds);
  EXPECT_EQ(r.pool.novel_size(), 0u);
  for (const auto& rep : r.discovery_reports) EXPECT_EQ(rep.accepted, 0u);
}

TEST(Train, NoStageB) {
  TrainConfig cfg = tiny_config();
  cfg.stage_b_epochs = 0;
  const Dataset ds = generate_dataset(cfg.world);
  const RunArtifacts r = train(cfg, ds);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_TRUE(r.discovery_reports.empty());
  EXPECT_EQ(r.pool.novel_size(), 0u);
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg = tiny_config();
  cfg.eval_every = 3;
  EXPECT_THROW(train(cfg, generate_dataset(cfg.world)), ConfigError);
  cfg = tiny_config();
  cfg.encoder.dim = 8;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, CropFeatureEvaluation) {
  TrainConfig cfg = tiny_config();
  cfg.eval.features = FeatureSource::kCrop;
  const Dataset ds = generate_dataset(cfg.world);
  const TrainContext ctx(ds, cfg);
  const TrainState st = initial_state(cfg, ctx);
  const EvalResult r = evaluate_model(cfg, ctx, st.params, 1);
  EXPECT_EQ(r.ap.size(), ds.vocab.size());
}

TEST(Ablation, VariantSets) {
  const auto comp = component_variants(tiny_config());
  ASSERT_EQ(comp.size(), 5u);
  EXPECT_EQ(comp[0].name, "detector_clip");
  EXPECT_EQ(comp[4].name, "nod_dcma_full");
  EXPECT_EQ(comp[3].config.stage_b.contrastive, ContrastiveMode::kBaseOnly);
  const auto thr = threshold_variants(tiny_config());
  ASSERT_EQ(thr.size(), 5u);
  EXPECT_EQ(thr[0].name, "disabled");
  EXPECT_EQ(thr[1].name, "sem0.3_geo0.3");
  EXPECT_EQ(thr[4].name, "sem0.5_geo0.5");
  EXPECT_EQ(thr[4].config.discovery.objectness_threshold, 0.5);
}

TEST(Ablation, SharedStageAMatchesFreshRun) {
  const TrainConfig base = tiny_config();
  const Dataset ds = generate_dataset(base.world);
  const auto comp = component_variants(base);
  const std::vector<AblationVariant> pick{comp[1], comp[4]};
  const auto rows = run_variants("components", pick, ds, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].name, "nod_dcma_full");
  const RunArtifacts fresh = train(comp[4].config, ds);
  EXPECT_EQ(rows[1].history, fresh.history);
  EXPECT_EQ(rows[0].history, train(comp[1].config, ds).history);
}

TEST(Ablation, FullSuiteRowCounts) {
  TrainConfig base = tiny_config();
  base.stage_a_epochs = 2;
  base.stage_b_epochs = 2;
  const Dataset ds = generate_dataset(base.world);
  const auto rows = run_ablation_suite(base, ds, 2);
  ASSERT_EQ(rows.size(), 10u);
  std::size_t comp = 0, thr = 0;
  for (const auto& r : rows) {
    comp += r.suite == "components";
    thr += r.suite == "thresholds";
    EXPECT_EQ(r.seed, base.seed);
    EXPECT_EQ(r.final.epoch, 4);
  }
  EXPECT_EQ(comp, 5u);
  EXPECT_EQ(thr, 5u);
}
