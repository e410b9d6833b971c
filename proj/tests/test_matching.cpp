#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace coda;

TEST(Assignment, TwoByTwo) {
  const CostMatrix m{2, 2, {0, 1, 1, 0}};
  const Assignment a = solve_assignment(m);
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.pairs[0], std::make_pair(0, 0));
  EXPECT_EQ(a.pairs[1], std::make_pair(1, 1));
  EXPECT_EQ(assignment_cost(m, a), 0.0);
}

TEST(Assignment, AntiDiagonal) {
  const CostMatrix m{2, 2, {5, 1, 1, 5}};
  const Assignment a = solve_assignment(m);
  EXPECT_EQ(a.label_of(0), 1);
  EXPECT_EQ(a.label_of(1), 0);
}

TEST(Assignment, RectangularLeavesUnmatched) {
  const CostMatrix wide{1, 3, {3, 1, 2}};
  const Assignment a = solve_assignment(wide);
  EXPECT_EQ(a.label_of(0), 1);
  EXPECT_EQ(a.unmatched_labels, (std::vector<int>{0, 2}));
  const CostMatrix tall{3, 1, {3, 1, 2}};
  const Assignment b = solve_assignment(tall);
  EXPECT_EQ(b.label_of(1), 0);
  EXPECT_EQ(b.unmatched_queries, (std::vector<int>{0, 2}));
}

TEST(Assignment, Empty) {
  const Assignment a = solve_assignment(CostMatrix{3, 0, {}});
  EXPECT_TRUE(a.pairs.empty());
  EXPECT_EQ(a.unmatched_queries.size(), 3u);
}

TEST(Assignment, EqualsBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 6), small(0, 4);
  std::uniform_real_distribution<double> real(0.0, 10.0);
  for (int t = 0; t < 400; ++t) {
    CostMatrix m{dim(rng), dim(rng), {}};
    m.data.resize(static_cast<std::size_t>(m.rows) * m.cols);
    // half the instances use small integers to force ties
    for (double& v : m.data) v = t % 2 ? real(rng) : small(rng);
    const Assignment a = solve_assignment(m);
    EXPECT_EQ(a.pairs.size(), static_cast<std::size_t>(std::min(m.rows, m.cols)));
    EXPECT_EQ(assignment_cost(m, a), oracle::brute_force_min_cost(m)) << "instance " << t;
  }
}

TEST(Match, DominantCandidateWins) {
  std::vector<QueryPrediction> preds(3);
  const Box3D target({0, 0, 4}, {1, 1, 1}, 0.2);
  preds[0].box = Box3D({2, 0, 4}, {1, 1, 1}, 0);
  preds[1].box = target;
  preds[2].box = Box3D({-2, 0, 5}, {1, 1, 1}, 0);
  for (auto& p : preds) p.objectness = 0.6;
  const std::vector<LabelBox> labels{{target, 1.0}};
  const Assignment a = match(preds, labels);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0], std::make_pair(1, 0));
  EXPECT_EQ(a.unmatched_queries, (std::vector<int>{0, 2}));
}

TEST(Match, CostFormula) {
  std::vector<QueryPrediction> preds(1);
  preds[0].box = Box3D({0.5, 0, 0}, {1, 1, 1}, 0);
  preds[0].objectness = 0.25;
  const std::vector<LabelBox> labels{{Box3D({0, 0, 0}, {1, 1, 1}, 0), 1.0}};
  const CostMatrix c = match_costs(preds, labels);
  EXPECT_NEAR(c(0, 0), 2.0 * (1.0 - 1.0 / 3.0) + 0.5 - std::log(0.25), 1e-12);
}
