#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "multiassign/errors.hpp"
#include "multiassign/losses.hpp"
#include "multiassign/oracles.hpp"

using namespace multiassign;

namespace {

constexpr double kEps = kProbEpsilon;

ModelConfig tiny(std::size_t n_aux) {
  ModelConfig c;
  c.d_model = 8;
  c.d_hidden = 12;
  c.n_queries = 6;
  c.num_classes = 3;
  c.n_aux = n_aux;
  c.rank = 2;
  c.seed = 5;
  return c;
}

std::vector<GroundTruth> two_gts() { return {{0, {0.3, 0.3, 0.2, 0.25}}, {2, {0.7, 0.6, 0.3, 0.2}}}; }

}  // namespace

TEST(VflPlus, Endpoints) {
  EXPECT_NEAR(vfl_plus(1 - kEps, 1.0, 1, 1.5).value, 0.0, 1e-6);
  EXPECT_NEAR(vfl_plus(kEps, 0.0, 0, 1.5).value, 0.0, 1e-6);
  // Out-of-range inputs are clamped rather than producing infinities.
  EXPECT_TRUE(std::isfinite(vfl_plus(0.0, 0.5, 1, 1.5).value));
  EXPECT_TRUE(std::isfinite(vfl_plus(1.0, 0.5, 0, 1.5).value));
}

TEST(VflPlus, SymmetricPositivePoint) { EXPECT_NEAR(vfl_plus(0.5, 0.5, 1, 1.5).value, std::log(2.0), 1e-12); }

TEST(VflPlus, NegativeBranchDirectEvaluation) {
  // 0.5^1.5 · ln 2 = 0.2450645...
  EXPECT_NEAR(vfl_plus(0.5, 0.0, 0, 1.5).value, std::pow(0.5, 1.5) * std::log(2.0), 1e-15);
  EXPECT_NEAR(vfl_plus(0.5, 0.0, 0, 1.5).value, 0.2450645358, 1e-10);
}

TEST(VflPlus, NegativeBranchIgnoresTarget) {
  EXPECT_EQ(vfl_plus(0.3, 0.0, 0, 1.5).value, vfl_plus(0.3, 0.9, 0, 1.5).value);
}

TEST(VflPlus, GridArgminAtTarget) {
  const auto r = oracle::vfl_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(VflPlus, NonnegativeAndNegativeBranchMonotone) {
  double prev = -1.0;
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double neg = vfl_plus(p, 0.0, 0, 1.5).value;
    EXPECT_GE(neg, 0.0);
    EXPECT_GT(neg, prev);
    prev = neg;
    for (double s : {0.0, 0.3, 1.0}) EXPECT_GE(vfl_plus(p, s, 1, 1.5).value, 0.0);
  }
}

TEST(VflPlus, DerivativeMatchesFiniteDifferences) {
  for (double p : {0.05, 0.3, 0.5, 0.77, 0.95})
    for (int y : {0, 1}) {
      const double s = 0.4;
      const Tensor2D x(1, 1, p);
      const Tensor2D an(1, 1, vfl_plus(p, s, y, 1.5).grad);
      EXPECT_LT(finite_diff_check([&](const Tensor2D& v) { return vfl_plus(v(0, 0), s, y, 1.5).value; }, x, an), 1e-6);
    }
}

TEST(ClassificationLoss, NoPositivesAtEpsilonIsZero) {
  const Tensor2D probs(4, 3, kEps);
  const LossTerm t = classification_loss(probs, AssignmentResult{}, std::vector<GroundTruth>{}, LossConfig{});
  EXPECT_NEAR(t.value, 0.0, 1e-9);
}

TEST(ClassificationLoss, PositiveCellAtTargetIsGridMinimum) {
  const auto gts = two_gts();
  AssignmentResult a;
  a.pairs = {{1, 0, 0.6}};
  Tensor2D probs(3, 3, 0.2);
  auto cell = [&](double p) {
    probs(1, 0) = p;
    return classification_loss(probs, a, gts, LossConfig{}).value;
  };
  double best_p = 0.0, best = 1e300;
  for (int j = 1; j < 10000; ++j)
    if (const double v = cell(j / 10000.0); v < best) {
      best = v;
      best_p = j / 10000.0;
    }
  EXPECT_NEAR(best_p, 0.6, 2e-4);
}

TEST(ClassificationLoss, NormalizedByPositiveCount) {
  const auto gts = two_gts();
  const Tensor2D probs(3, 3, 0.4);
  AssignmentResult one, two;
  one.pairs = {{0, 0, 0.5}};
  two.pairs = {{0, 0, 0.5}, {1, 1, 0.5}};
  const double v1 = classification_loss(probs, one, gts, LossConfig{}).value;
  const double v2 = classification_loss(probs, two, gts, LossConfig{}).value;
  const double pos = vfl_plus(0.4, 0.5, 1, 1.5).value, neg = vfl_plus(0.4, 0.0, 0, 1.5).value;
  EXPECT_NEAR(v1, pos + 8 * neg, 1e-12);
  EXPECT_NEAR(v2, (2 * pos + 7 * neg) / 2, 1e-12);
}

TEST(ClassificationLoss, OutOfRangeIndexIsValidationError) {
  AssignmentResult a;
  a.pairs = {{7, 0, 0.5}};
  EXPECT_THROW(classification_loss(Tensor2D(3, 3, 0.5), a, two_gts(), LossConfig{}), ValidationError);
}

TEST(ClassificationLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  const auto gts = two_gts();
  AssignmentResult a;
  a.pairs = {{0, 1, 0.7}, {2, 0, 0.3}};
  const Tensor2D probs = oracle::random_tensor(rng, 4, 3, 0.05, 0.95);
  const LossTerm t = classification_loss(probs, a, gts, LossConfig{});
  EXPECT_LT(finite_diff_check([&](const Tensor2D& v) { return classification_loss(v, a, gts, LossConfig{}).value; },
                              probs, t.grad),
            1e-6);
}

TEST(BoxLoss, PerfectBoxesAndNoPositives) {
  const auto gts = two_gts();
  Tensor2D boxes(2, 4);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t j = 0; j < 4; ++j) boxes(g, j) = gts[g].box.as_array()[j];
  AssignmentResult a;
  a.pairs = {{0, 0, 1.0}, {1, 1, 1.0}};
  const BoxLoss perfect = box_loss(boxes, a, gts, LossConfig{});
  EXPECT_NEAR(perfect.value, 0.0, 1e-15);
  const BoxLoss none = box_loss(boxes, AssignmentResult{}, gts, LossConfig{});
  EXPECT_EQ(none.value, 0.0);
  EXPECT_EQ(max_abs(none.grad), 0.0);
}

TEST(BoxLoss, HandCaseOffsetInCx) {
  const std::vector<GroundTruth> gts{{0, {0.5, 0.5, 0.2, 0.2}}};
  const Tensor2D boxes = Tensor2D::from_rows({{0.6, 0.5, 0.2, 0.2}});
  AssignmentResult a;
  a.pairs = {{0, 0, 0.0}};
  // x-extents [0.5,0.7] vs [0.4,0.6]: IoU = 0.1/0.3 and hull = union, so GIoU = 1/3.
  const BoxLoss b = box_loss(boxes, a, gts, LossConfig{});
  EXPECT_NEAR(b.value, 5.0 * 0.1 + 2.0 * (1.0 - 1.0 / 3.0), 1e-12);
}

TEST(BoxLoss, GradientMatchesFiniteDifferences) {
  const auto gts = two_gts();
  const Tensor2D boxes = Tensor2D::from_rows({{0.33, 0.28, 0.22, 0.2}, {0.5, 0.5, 0.1, 0.1}, {0.66, 0.63, 0.25, 0.24}});
  AssignmentResult a;
  a.pairs = {{0, 0, 0.5}, {2, 1, 0.5}};
  const BoxLoss b = box_loss(boxes, a, gts, LossConfig{});
  EXPECT_LT(
      finite_diff_check([&](const Tensor2D& v) { return box_loss(v, a, gts, LossConfig{}).value; }, boxes, b.grad),
      1e-6);
}

TEST(TotalLoss, NoAuxEqualsPrimary) {
  const Model m(tiny(0));
  std::mt19937_64 rng(32);
  const auto out = model_forward(m, oracle::random_tensor(rng, 9, 8));
  const auto gts = two_gts();
  const auto asg = assign_all(out, gts, CostWeights{}, {});
  const TotalLoss tl = total_loss(out, gts, asg, LossConfig{});
  EXPECT_EQ(tl.report.grand_total, tl.report.primary_total());
}

TEST(TotalLoss, IdenticalBranchesHaveEqualLosses) {
  const Model m(tiny(3));
  std::mt19937_64 rng(33);
  const auto out = model_forward(m, oracle::random_tensor(rng, 9, 8));
  const auto gts = two_gts();
  const std::vector<MatchConfig> same(3, MatchConfig{0.5, 0.1, 4});
  const auto asg = assign_all(out, gts, CostWeights{}, same);
  const TotalLoss tl = total_loss(out, gts, asg, LossConfig{});
  for (const auto& layer : tl.report.branches) {
    EXPECT_EQ(layer[1].total, layer[2].total);
    EXPECT_EQ(layer[1].total, layer[3].total);
  }
  double expected = 0.0;
  for (const auto& layer : tl.report.branches) expected += layer[0].total + (layer[1].total + layer[2].total + layer[3].total) / 3;
  EXPECT_NEAR(tl.report.grand_total, expected, 1e-12);
}

TEST(TotalLoss, QualityTargetsFollowBranchRule) {
  const Model m(tiny(2));
  std::mt19937_64 rng(34);
  const auto out = model_forward(m, oracle::random_tensor(rng, 9, 8));
  const auto gts = two_gts();
  const std::vector<MatchConfig> strategies{{0.5, 0.05, 2}, {0.5, 0.05, 4}};
  const auto asg = assign_all(out, gts, CostWeights{}, strategies);
  for (std::size_t l = 0; l < asg.size(); ++l) {
    const auto preds0 = to_predictions(out.outputs[l][0]);
    for (const auto& p : asg[l][0].pairs)
      EXPECT_EQ(p.quality, iou(to_xyxy(preds0[p.query].box), to_xyxy(gts[p.gt].box)));
    for (std::size_t b = 1; b < 3; ++b) {
      const auto preds = to_predictions(out.outputs[l][b]);
      EXPECT_EQ(asg[l][b].flavor, AssignmentFlavor::kOneToMany);
      for (const auto& p : asg[l][b].pairs) EXPECT_EQ(p.quality, match_score(preds[p.query], gts[p.gt], 0.5));
    }
  }
}

TEST(TotalLoss, InvariantToAuxiliaryOrder) {
  Model m(tiny(2));
  std::mt19937_64 rng(35);
  for (auto& layer : m.layers)
    for (auto& a : layer.adapters) a.b1.value = oracle::random_tensor(rng, a.b1.value.rows(), a.b1.value.cols());
  const Tensor2D x = oracle::random_tensor(rng, 9, 8);
  const auto gts = two_gts();
  const std::vector<MatchConfig> s{{0.5, 0.05, 2}, {0.5, 0.05, 4}};
  const auto out = model_forward(m, x);
  const double forward = total_loss(out, gts, assign_all(out, gts, CostWeights{}, s), LossConfig{}).report.grand_total;
  Model swapped = m;
  for (auto& layer : swapped.layers) std::swap(layer.adapters[0], layer.adapters[1]);
  const std::vector<MatchConfig> s_rev{s[1], s[0]};
  const auto out2 = model_forward(swapped, x);
  const double reversed =
      total_loss(out2, gts, assign_all(out2, gts, CostWeights{}, s_rev), LossConfig{}).report.grand_total;
  EXPECT_NEAR(forward, reversed, 1e-12);
}

TEST(TotalLoss, ZeroAuxWeightMatchesPlainRunExactly) {
  std::mt19937_64 rng(36);
  const Tensor2D x = oracle::random_tensor(rng, 9, 8);
  const auto gts = two_gts();
  LossConfig cfg;
  cfg.aux_weight = 0.0;

  Model plain(tiny(0));
  plain.zero_grad();
  ForwardCache c0;
  const auto o0 = model_forward(plain, x, &c0);
  const auto t0 = total_loss(o0, gts, assign_all(o0, gts, CostWeights{}, {}), cfg);
  model_backward(plain, c0, o0, t0.grads);

  Model aux(tiny(3));
  aux.zero_grad();
  ForwardCache c3;
  const auto o3 = model_forward(aux, x, &c3);
  const auto t3 = total_loss(o3, gts, assign_all(o3, gts, CostWeights{}, strategy_set(3, true, 0.5, 0.05)), cfg);
  model_backward(aux, c3, o3, t3.grads);

  EXPECT_EQ(t0.report.grand_total, t3.report.grand_total);
  for (const auto& p : aux.parameters()) {
    if (p.name.find("adapter") != std::string::npos) {
      EXPECT_EQ(max_abs(p.slot->grad), 0.0) << p.name;
      continue;
    }
    bool found = false;
    for (const auto& q : plain.parameters())
      if (q.name == p.name) {
        found = true;
        EXPECT_EQ(p.slot->grad, q.slot->grad) << p.name;
      }
    EXPECT_TRUE(found) << p.name;
  }
}

TEST(TotalLoss, MismatchedBranchCountIsConfigError) {
  const Model m(tiny(2));
  std::mt19937_64 rng(37);
  const auto out = model_forward(m, oracle::random_tensor(rng, 9, 8));
  const auto gts = two_gts();
  EXPECT_THROW(assign_all(out, gts, CostWeights{}, {}), ConfigError);
  Assignments bad(2, std::vector<AssignmentResult>(1));
  EXPECT_THROW(total_loss(out, gts, bad, LossConfig{}), ConfigError);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.lambda_l1 = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
