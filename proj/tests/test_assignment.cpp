#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "multiassign/assignment.hpp"
#include "multiassign/errors.hpp"
#include "multiassign/oracles.hpp"

using namespace multiassign;

namespace {

Prediction pred(std::vector<double> scores, BoxCXCYWH box) { return {std::move(scores), box}; }

}  // namespace

TEST(Hungarian, TwoByTwo) {
  const auto m = hungarian(Tensor2D::from_rows({{1, 2}, {3, 1}}));
  EXPECT_EQ(m, (std::vector<QueryGtPair>{{0, 0}, {1, 1}}));
  EXPECT_EQ(assignment_cost(Tensor2D::from_rows({{1, 2}, {3, 1}}), m), 2.0);
}

TEST(Hungarian, ZeroDiagonal) {
  Tensor2D c(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) c(i, i) = 0.0;
  const auto m = hungarian(c);
  for (std::size_t g = 0; g < 4; ++g) EXPECT_EQ(m[g], QueryGtPair(g, g));
}

TEST(Hungarian, EmptyAndErrors) {
  EXPECT_TRUE(hungarian(Tensor2D(3, 0)).empty());
  EXPECT_THROW(hungarian(Tensor2D(2, 3)), CapacityError);
  Tensor2D bad(2, 2, 1.0);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(bad), ValidationError);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(hungarian(bad), ValidationError);
}

TEST(Hungarian, TieBreakIsLexicographicallySmallest) {
  // All-equal costs: every matching is optimal; the smallest query sequence is 0,1,2.
  const auto m = hungarian(Tensor2D(5, 3, 1.0));
  EXPECT_EQ(m, (std::vector<QueryGtPair>{{0, 0}, {1, 1}, {2, 2}}));
  // Both {0->0, 1->1} and {1->0, 0->1} cost 2; the first reads (0, 1).
  const auto m2 = hungarian(Tensor2D::from_rows({{1, 1}, {1, 1}, {5, 5}}));
  EXPECT_EQ(m2, (std::vector<QueryGtPair>{{0, 0}, {1, 1}}));
  // Unique optimum is not overridden by the tie-break.
  const auto m3 = hungarian(Tensor2D::from_rows({{2, 0}, {0, 2}}));
  EXPECT_EQ(m3, (std::vector<QueryGtPair>{{1, 0}, {0, 1}}));
}

TEST(Hungarian, RandomSquareMatricesMatchBruteForce) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const Tensor2D c = oracle::random_tensor(rng, 6, 6, 0.0, 10.0);
    EXPECT_EQ(assignment_cost(c, hungarian(c)), oracle::brute_force_min_cost(c)) << "trial " << t;
  }
}

TEST(Hungarian, OracleSuiteIncludingRectangularAndTies) {
  const auto r = oracle::hungarian_suite(200, 22);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(O2oCost, PerfectPredictionCostsZero) {
  const GroundTruth g{1, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> p{pred({0.0, 1.0}, g.box)};
  EXPECT_EQ(o2o_cost(p, std::vector<GroundTruth>{g}, CostWeights{})(0, 0), 0.0);
}

TEST(O2oCost, ClassTermOnly) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> p{pred({0.3}, {0.1, 0.1, 0.1, 0.1})};
  EXPECT_NEAR(o2o_cost(p, std::vector<GroundTruth>{g}, CostWeights{1, 0, 0})(0, 0), 0.7, 1e-15);
}

TEST(O2oCost, DefaultWeightsHandSum) {
  // Pred shifted by 0.1 in cx: L1 = 0.1; boxes [0.4,0.6] vs [0.3,0.5] in x, same y
  // -> IoU = 0.1/0.3, hull = union, GIoU = 1/3.
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> p{pred({0.6}, {0.4, 0.5, 0.2, 0.2})};
  const double expected = 2.0 * 0.4 + 5.0 * 0.1 + 2.0 * (1.0 - 1.0 / 3.0);
  EXPECT_NEAR(o2o_cost(p, std::vector<GroundTruth>{g}, CostWeights{})(0, 0), expected, 1e-12);
}

TEST(CostWeights, RejectsNegativeAndAllZero) {
  EXPECT_THROW((CostWeights{-1, 1, 1}).validate(), ConfigError);
  EXPECT_THROW((CostWeights{0, 0, 0}).validate(), ConfigError);
}

TEST(MatchScore, ArithmeticAndEndpoints) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  // IoU 0.6: same height, x overlap 0.15 of widths 0.2 -> 0.15/0.25.
  const Prediction p = pred({0.8}, {0.55, 0.5, 0.2, 0.2});
  const double i = iou(to_xyxy(p.box), to_xyxy(g.box));
  ASSERT_NEAR(i, 0.6, 1e-12);
  EXPECT_NEAR(match_score(p, g, 0.5), 0.7, 1e-12);
  EXPECT_EQ(match_score(p, g, 1.0), 0.8);
  EXPECT_EQ(match_score(p, g, 0.0), i);
}

TEST(O2mAssign, KOneKeepsOnlyBest) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> preds{pred({0.9}, g.box), pred({0.95}, g.box), pred({0.7}, g.box)};
  const auto r = o2m_assign(preds, std::vector<GroundTruth>{g}, {0.5, 0.4, 1});
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].query, 1u);
  EXPECT_NEAR(r.pairs[0].quality, 0.975, 1e-12);
  EXPECT_EQ(r.flavor, AssignmentFlavor::kOneToMany);
}

TEST(O2mAssign, AllBelowThresholdGivesNoPositives) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> preds{pred({0.1}, {0.1, 0.1, 0.1, 0.1}), pred({0.2}, {0.9, 0.9, 0.1, 0.1})};
  EXPECT_TRUE(o2m_assign(preds, std::vector<GroundTruth>{g}, {0.5, 0.4, 6}).pairs.empty());
  EXPECT_TRUE(o2m_assign(preds, std::vector<GroundTruth>{}, {0.5, 0.4, 6}).pairs.empty());
}

TEST(O2mAssign, QueryBindsToArgmaxGroundTruth) {
  const GroundTruth a{0, {0.3, 0.3, 0.2, 0.2}}, b{0, {0.7, 0.7, 0.2, 0.2}};
  const std::vector<Prediction> preds{pred({0.9}, {0.68, 0.7, 0.2, 0.2})};
  const auto r = o2m_assign(preds, std::vector<GroundTruth>{a, b}, {0.5, 0.4, 6});
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].gt, 1u);
}

TEST(O2mAssign, EqualScoresTieToLowerGt) {
  const GroundTruth a{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<Prediction> preds{pred({0.9}, a.box)};
  const auto r = o2m_assign(preds, std::vector<GroundTruth>{a, a}, {0.5, 0.4, 6});
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].gt, 0u);
}

TEST(O2mAssign, MatcherInvariantsOnRandomSets) {
  const auto r = oracle::matcher_suite(500, 23);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(O2mAssign, PermutingGtsRelabelsIndices) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 100; ++t) {
    const auto preds = oracle::random_predictions(rng, 12, 4);
    auto gts = oracle::random_gts(rng, 4, 4);
    // Distinct classes, so two gts cannot tie on a query with zero IoU to both.
    for (std::size_t i = 0; i < gts.size(); ++i) gts[i].class_index = i;
    const MatchConfig cfg{0.5, 0.2, 3};
    const auto base = o2m_assign(preds, gts, cfg);
    std::vector<std::size_t> perm{2, 0, 3, 1};  // new index i holds old gt perm[i]
    std::vector<GroundTruth> permuted;
    for (std::size_t i : perm) permuted.push_back(gts[i]);
    const auto other = o2m_assign(preds, permuted, cfg);
    auto key = [](std::vector<AssignedPair> v) {
      std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.query < y.query; });
      return v;
    };
    auto relabeled = other.pairs;
    for (auto& p : relabeled) p.gt = perm[p.gt];
    EXPECT_EQ(key(base.pairs), key(relabeled)) << "trial " << t;
  }
}

TEST(O2mAssign, BindingInvariantUnderConstantShift) {
  // alpha=1 makes M the class score of the gt's class; two gts of different
  // classes. Adding a constant to every score of a query shifts all its M values
  // equally, so the bound gt must stay the same.
  const GroundTruth a{0, {0.3, 0.3, 0.2, 0.2}}, b{1, {0.7, 0.7, 0.2, 0.2}};
  const std::vector<Prediction> lo{pred({0.5, 0.55}, {0.5, 0.5, 0.2, 0.2})};
  const std::vector<Prediction> hi{pred({0.7, 0.75}, {0.5, 0.5, 0.2, 0.2})};
  const auto r_lo = o2m_assign(lo, std::vector<GroundTruth>{a, b}, {1.0, 0.1, 6});
  const auto r_hi = o2m_assign(hi, std::vector<GroundTruth>{a, b}, {1.0, 0.1, 6});
  ASSERT_EQ(r_lo.pairs.size(), 1u);
  ASSERT_EQ(r_hi.pairs.size(), 1u);
  EXPECT_EQ(r_lo.pairs[0].gt, r_hi.pairs[0].gt);
}

TEST(O2oAssign, PerfectPredictionHasUnitQuality) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const auto r = o2o_assign(std::vector<Prediction>{pred({1.0}, g.box)}, std::vector<GroundTruth>{g}, {});
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].quality, 1.0);
}

TEST(O2oAssign, MoreGtsThanQueriesIsCapacityError) {
  const auto gts = std::vector<GroundTruth>(2, GroundTruth{0, {0.5, 0.5, 0.2, 0.2}});
  EXPECT_THROW(o2o_assign(std::vector<Prediction>{pred({0.5}, {0.5, 0.5, 0.2, 0.2})}, gts, {}), CapacityError);
}

TEST(O2oAssign, ThreeQueriesTwoGtsMatchesBruteForce) {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 50; ++t) {
    const auto preds = oracle::random_predictions(rng, 3, 2);
    const auto gts = oracle::random_gts(rng, 2, 2);
    const Tensor2D c = o2o_cost(preds, gts, {});
    const auto r = o2o_assign(preds, gts, {});
    double total = 0.0;
    for (const auto& p : r.pairs) {
      total += c(p.query, p.gt);
      EXPECT_EQ(p.quality, iou(to_xyxy(preds[p.query].box), to_xyxy(gts[p.gt].box)));
    }
    EXPECT_EQ(total, oracle::brute_force_min_cost(c));
  }
}

TEST(StrategySet, TableValues) {
  auto ks = [](const std::vector<MatchConfig>& v) {
    std::vector<std::size_t> out;
    for (const auto& m : v) out.push_back(m.k);
    return out;
  };
  EXPECT_EQ(ks(strategy_set(3, true)), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(ks(strategy_set(2, false)), (std::vector<std::size_t>{6, 6}));
  EXPECT_EQ(ks(strategy_set(1, true)), (std::vector<std::size_t>{6}));
  EXPECT_EQ(ks(strategy_set(1, false)), (std::vector<std::size_t>{6}));
  EXPECT_EQ(ks(strategy_set(2, true)), (std::vector<std::size_t>{3, 6}));
  EXPECT_EQ(ks(strategy_set(5, true)), (std::vector<std::size_t>{2, 3, 4, 5, 6}));
  EXPECT_EQ(ks(strategy_set(3, false)), (std::vector<std::size_t>{6, 6, 6}));
  for (const auto& m : strategy_set(3, true)) {
    EXPECT_EQ(m.alpha, MatchConfig{}.alpha);
    EXPECT_EQ(m.tau, MatchConfig{}.tau);
  }
}

TEST(StrategySet, UnsupportedCountsThrow) {
  EXPECT_THROW(strategy_set(4, true), ConfigError);
  EXPECT_THROW(strategy_set(5, false), ConfigError);
  EXPECT_THROW(strategy_set(0, true), ConfigError);
}

TEST(MatchConfig, Validation) {
  EXPECT_THROW((MatchConfig{1.5, 0.4, 6}).validate(), ConfigError);
  EXPECT_THROW((MatchConfig{0.5, -0.1, 6}).validate(), ConfigError);
  EXPECT_THROW((MatchConfig{0.5, 0.4, 0}).validate(), ConfigError);
}
