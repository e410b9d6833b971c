#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace coda;

namespace {

const Box3D kBox({0, 0, 4}, {1, 1, 1}, 0);

Vocabulary two_cats() { return oracle::numbered_vocab(2, 1); }

}  // namespace

TEST(Evaluate, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 300; ++t) {
    const auto e = oracle::random_eval_instance(rng);
    for (double thr : {0.25, 0.5}) {
      const EvalResult got = evaluate(e.dets, e.gts, e.vocab, thr);
      const EvalResult want = oracle::exhaustive_evaluate(e.dets, e.gts, e.vocab, thr);
      EXPECT_TRUE(oracle::same_result(got, want)) << "instance " << t << " thr " << thr;
    }
  }
}

TEST(Evaluate, SinglePerfectDetection) {
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}}};
  const std::vector<std::vector<Detection>> dets{{{kBox, 1, 0.9}}};
  const EvalResult r = evaluate(dets, gts, two_cats());
  EXPECT_EQ(r.ap[1], 1.0);
  EXPECT_EQ(r.ar[1], 1.0);
  EXPECT_EQ(r.ap_novel, 1.0);
  EXPECT_TRUE(std::isnan(r.ap[0]));
  EXPECT_EQ(r.ap_base, 0.0);
  EXPECT_EQ(r.ap_mean, 1.0);
}

TEST(Evaluate, NoDetections) {
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 0}, {kBox, 1}}};
  const std::vector<std::vector<Detection>> dets{{}};
  const EvalResult r = evaluate(dets, gts, two_cats());
  EXPECT_EQ(r.ap_mean, 0.0);
  EXPECT_EQ(r.ar_mean, 0.0);
}

TEST(Evaluate, WrongCategoryIsFalsePositive) {
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}}};
  const std::vector<std::vector<Detection>> dets{{{kBox, 0, 0.9}}};
  EXPECT_EQ(evaluate(dets, gts, two_cats()).ap[1], 0.0);
}

TEST(Evaluate, DuplicateAboveTruePositiveLowersAp) {
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}, {Box3D({3, 0, 4}, {1, 1, 1}, 0), 1}}};
  std::vector<std::vector<Detection>> dets{{{kBox, 1, 0.9}, {gts[0][1].box, 1, 0.5}}};
  const double clean = evaluate(dets, gts, two_cats()).ap[1];
  EXPECT_EQ(clean, 1.0);
  dets[0].push_back({kBox, 1, 0.7});
  const EvalResult r = evaluate(dets, gts, two_cats());
  EXPECT_LT(r.ap[1], clean);
  EXPECT_NEAR(r.ap[1], 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
  EXPECT_EQ(r.ar[1], 1.0);
}

TEST(Evaluate, ShiftingDetectionAwayNeverHelps) {
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}}};
  double prev = 2.0;
  for (int i = 0; i <= 20; ++i) {
    const std::vector<std::vector<Detection>> dets{{{Box3D({0.05 * i, 0, 4}, {1, 1, 1}, 0), 1, 0.9}}};
    const double ap = evaluate(dets, gts, two_cats()).ap[1];
    EXPECT_LE(ap, prev);
    prev = ap;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(Evaluate, ThresholdIsInclusive) {
  const Box3D half({0.5, 0, 4}, {1, 1, 1}, 0);
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}}};
  const std::vector<std::vector<Detection>> dets{{{half, 1, 0.9}}};
  const double iou = iou3d(kBox, half);
  EXPECT_EQ(evaluate(dets, gts, two_cats(), iou).ar[1], 1.0);
  EXPECT_EQ(evaluate(dets, gts, two_cats(), std::nextafter(iou, 1.0)).ar[1], 0.0);
}

TEST(AveragePrecision, ElevenPoint) {
  const std::vector<double> rec{0.5, 0.5, 1.0}, prec{1.0, 0.5, 2.0 / 3.0};
  EXPECT_NEAR(average_precision(rec, prec, ApInterpolation::kElevenPoint), (6 * 1.0 + 5 * 2.0 / 3.0) / 11.0, 1e-12);
  EXPECT_NEAR(average_precision(rec, prec), 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
  const std::vector<std::vector<GroundTruthBox>> gts{{{kBox, 1}}};
  const std::vector<std::vector<Detection>> dets{{{kBox, 1, 0.9}}};
  EXPECT_NEAR(evaluate(dets, gts, two_cats(), 0.25, ApInterpolation::kElevenPoint).ap[1], 1.0, 1e-12);
}

TEST(Classify, ArgmaxAndConfidence) {
  TextEmbeddings t;
  t.names = {"a", "b"};
  t.dim = 3;
  t.rows = {1, 0, 0, 0, 1, 0};
  t.background = {0, 0, 1};
  std::vector<QueryPrediction> preds(3);
  preds[0].feature = {0, 2, 0};
  preds[0].objectness = 0.5;
  preds[1].feature = {0, 0, 1};
  preds[2].feature = {1, 0, 0};
  preds[2].objectness = 0.8;
  const auto dets = classify_predictions(preds, t, {1.0, true});
  ASSERT_EQ(dets.size(), 2u);  // background query dropped
  EXPECT_EQ(dets[0].category, 1);
  const double pmax = std::exp(1.0) / (std::exp(1.0) + 2.0);
  EXPECT_NEAR(dets[0].confidence, 0.5 * pmax, 1e-12);
  EXPECT_EQ(dets[1].category, 0);
  EXPECT_NEAR(dets[1].confidence, 0.8 * pmax, 1e-12);
}

TEST(Postprocess, FloorAndNms) {
  std::vector<Detection> d{{kBox, 0, 0.9}, {kBox, 0, 0.8}, {kBox, 1, 0.7}, {Box3D({3, 0, 4}, {1, 1, 1}, 0), 0, 0.6},
                           {kBox, 0, 0.01}};
  const auto kept = postprocess(d, {});
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].confidence, 0.9);
  EXPECT_EQ(kept[1].category, 1);
  EXPECT_EQ(kept[2].confidence, 0.6);
  EXPECT_EQ(postprocess(d, {0.05, 1.0}).size(), 4u);
}
