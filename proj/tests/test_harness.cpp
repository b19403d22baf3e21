#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"
#include "multiassign/oracles.hpp"

using namespace multiassign;

namespace {

// A short, small run shared by several tests.
ExperimentConfig quick_config(std::size_t n_aux, std::uint64_t seed = 1) {
  ExperimentConfig cfg;
  cfg.model.n_aux = n_aux;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  cfg.train.steps = 30;
  cfg.train.batch_size = 2;
  cfg.train.eval_interval = 10;
  cfg.data.val_scenes = 12;
  return cfg;
}

Detection det(std::size_t scene, std::size_t cls, double score, BoxXYXY box) { return {scene, cls, score, box}; }

}  // namespace

TEST(Scene, NoiselessTokensDecodeToBoxes) {
  DataConfig data;
  Rng rng(41);
  for (int t = 0; t < 50; ++t) {
    const SyntheticScene s = gen_scene(rng, 1 + t % 4, 5, 0.0, data, 32);
    for (const auto& g : s.gts) {
      const std::size_t col = static_cast<std::size_t>(g.box.cx * data.grid);
      const std::size_t row = static_cast<std::size_t>(g.box.cy * data.grid);
      const BoxCXCYWH d = decode_object_token(s.features.row(row * data.grid + col), 5, data.grid);
      EXPECT_NEAR(d.cx, g.box.cx, 1e-12);
      EXPECT_NEAR(d.cy, g.box.cy, 1e-12);
      EXPECT_EQ(d.w, g.box.w);
      EXPECT_EQ(d.h, g.box.h);
      EXPECT_EQ(s.features(row * data.grid + col, g.class_index), data.onehot_scale);
    }
  }
}

TEST(Scene, BackgroundTokensAreNoiseOnly) {
  DataConfig data;
  Rng rng(42);
  const SyntheticScene s = gen_scene(rng, 2, 5, 0.0, data, 32);
  std::size_t nonzero_rows = 0;
  for (std::size_t i = 0; i < s.features.rows(); ++i) {
    double m = 0.0;
    for (double v : s.features.row(i)) m = std::max(m, std::abs(v));
    nonzero_rows += m > 0.0;
  }
  EXPECT_EQ(nonzero_rows, 2u);
}

TEST(Scene, SameSeedSameScene) {
  DataConfig data;
  Rng a(43), b(43);
  const SyntheticScene s1 = sample_scene(a, data, 5, 32), s2 = sample_scene(b, data, 5, 32);
  EXPECT_EQ(s1.features, s2.features);
  ASSERT_EQ(s1.gts.size(), s2.gts.size());
  for (std::size_t i = 0; i < s1.gts.size(); ++i) EXPECT_EQ(s1.gts[i].box, s2.gts[i].box);
}

TEST(Scene, InvariantsOverThousandScenes) {
  DataConfig data;
  Rng rng(44);
  for (int t = 0; t < 1000; ++t) {
    const SyntheticScene s = sample_scene(rng, data, 5, 32);
    ASSERT_GE(s.gts.size(), data.min_objects);
    ASSERT_LE(s.gts.size(), data.max_objects);
    ASSERT_EQ(s.features.rows(), data.grid * data.grid);
    for (std::size_t i = 0; i < s.gts.size(); ++i) {
      const BoxXYXY b = to_xyxy(s.gts[i].box);
      EXPECT_GE(b.x1, 0.0);
      EXPECT_GE(b.y1, 0.0);
      EXPECT_LE(b.x2, 1.0);
      EXPECT_LE(b.y2, 1.0);
      EXPECT_LT(s.gts[i].class_index, 5u);
      for (std::size_t j = i + 1; j < s.gts.size(); ++j) EXPECT_LE(iou(b, to_xyxy(s.gts[j].box)), 0.3);
    }
  }
}

TEST(Scene, ImpossiblePlacementIsGenerationError) {
  DataConfig data;
  data.min_size = data.max_size = 0.9;  // two such boxes always overlap heavily
  Rng rng(45);
  EXPECT_THROW(gen_scene(rng, 2, 5, 0.1, data, 32), GenerationError);
  EXPECT_THROW(gen_scene(rng, 0, 5, 0.1, DataConfig{}, 32), GenerationError);
}

TEST(Scene, TooNarrowModelIsConfigError) {
  ExperimentConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.rank = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Optimizer, ZeroGradientsLeaveParametersUnchanged) {
  Model m(quick_config(1).model);
  const Model before = m;
  m.zero_grad();
  AdamOptimizer opt(OptimizerConfig{});
  opt.step(m);
  const auto a = m.parameters();
  const auto b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].slot->value, b[i].slot->value) << a[i].name;
}

TEST(Optimizer, ScalarQuadraticConverges) {
  GradSlot x(Tensor2D(1, 1, 1.0));
  std::vector<NamedParam> params{{"x", &x, false}};
  OptimizerConfig c;
  c.lr = 0.05;  // at 1e-3 Adam cannot travel a unit distance in 200 steps
  AdamOptimizer opt(c);
  for (int step = 0; step < 200; ++step) {
    x.grad(0, 0) = 2.0 * x.value(0, 0);
    opt.step(params);
  }
  EXPECT_LT(std::abs(x.value(0, 0)), 1e-3);
}

TEST(Optimizer, BoxHeadMovesTenTimesLess) {
  GradSlot cls(Tensor2D(1, 1, 0.0)), box(Tensor2D(1, 1, 0.0));
  std::vector<NamedParam> params{{"cls", &cls, false}, {"box", &box, true}};
  AdamOptimizer opt(OptimizerConfig{});
  cls.grad(0, 0) = box.grad(0, 0) = 0.37;
  opt.step(params);
  EXPECT_NEAR(box.value(0, 0) * 10.0, cls.value(0, 0), 1e-15);
  EXPECT_EQ(cls.grad(0, 0), 0.0);
  EXPECT_EQ(box.grad(0, 0), 0.0);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  GradSlot a(Tensor2D(1, 1, 1.0)), b(Tensor2D(1, 2, 1.0));
  std::vector<NamedParam> params{{"first", &a, false}, {"layer1.ffn.w1", &b, false}};
  b.grad(0, 1) = std::nan("");
  AdamOptimizer opt(OptimizerConfig{});
  try {
    opt.step(params);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("layer1.ffn.w1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a.value(0, 0), 1.0);
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = OptimizerConfig{};
  c.box_head_lr_mult = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, SameSeedGivesIdenticalLog) {
  const auto a = train(quick_config(2));
  const auto b = train(quick_config(2));
  EXPECT_EQ(metrics_csv(a.log), metrics_csv(b.log));
  EXPECT_NE(metrics_csv(a.log), metrics_csv(train(quick_config(2, 2)).log));
}

TEST(Train, LogShape) {
  const auto r = train(quick_config(3));
  ASSERT_EQ(r.log.rows.size(), 4u * 4u);  // epochs 0..3, four branches each
  for (std::size_t i = 0; i < r.log.rows.size(); ++i) {
    EXPECT_EQ(r.log.rows[i].epoch, i / 4);
    EXPECT_EQ(r.log.rows[i].branch, i % 4);
    EXPECT_EQ(r.log.rows[i].o2o_primary_loss, r.log.rows[i - i % 4].loss_total);
  }
  const std::string csv = metrics_csv(r.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
}

TEST(Train, EpochLossesReplayFromCheckpoints) {
  ExperimentConfig cfg = quick_config(2);
  cfg.train.checkpoint_every_epoch = true;
  const auto r = train(cfg);
  const auto val = make_validation_set(cfg.data, cfg.model.num_classes, cfg.model.d_model);
  ASSERT_EQ(r.epoch_checkpoints.size(), 4u);
  for (const auto& ck : r.epoch_checkpoints) {
    std::stringstream ss;
    save_checkpoint(ck.model, ss);
    const Model reloaded = load_checkpoint(ss);
    const double replay = validation_losses(reloaded, val, cfg).per_branch[0].total;
    EXPECT_EQ(replay, r.log.rows[ck.epoch * 3].o2o_primary_loss) << "epoch " << ck.epoch;
  }
}

TEST(Train, AuxiliaryBranchesChangeTheTrajectory) {
  ExperimentConfig plain = quick_config(0), aux = quick_config(1);
  plain.train.steps = aux.train.steps = 1;
  aux.match.tau = 0.0;  // guarantees one-to-many positives on step 1
  const auto a = train(plain).model, b = train(aux).model;
  EXPECT_NE(a.layers[0].ffn.w1.value, b.layers[0].ffn.w1.value);
  EXPECT_NE(a.query_embed.value, b.query_embed.value);
}

TEST(Train, DivergenceIsReportedWithStep) {
  ExperimentConfig cfg = quick_config(0);
  cfg.data.noise = 1e200;  // attention logits overflow to non-finite values
  cfg.train.steps = 5;
  try {
    train(cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

TEST(Ap, PerfectPredictionsScoreOne) {
  const std::vector<std::vector<GroundTruth>> gts{{{1, {0.3, 0.3, 0.2, 0.2}}, {0, {0.7, 0.7, 0.2, 0.2}}}};
  std::vector<Detection> dets;
  for (const auto& g : gts[0]) dets.push_back(det(0, g.class_index, 1.0, to_xyxy(g.box)));
  const ApResult r = average_precision(dets, gts, 3);
  EXPECT_DOUBLE_EQ(r.ap50, 1.0);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_EQ(r.per_threshold.size(), kNumIouThresholds);
}

TEST(Ap, NoDetectionsScoreZero) {
  const std::vector<std::vector<GroundTruth>> gts{{{1, {0.3, 0.3, 0.2, 0.2}}}};
  const ApResult r = average_precision({}, gts, 3);
  EXPECT_EQ(r.ap50, 0.0);
  EXPECT_EQ(r.map, 0.0);
}

TEST(Ap, FalsePositiveRankingHandCases) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<std::vector<GroundTruth>> gts{{g}};
  const BoxXYXY miss{0.0, 0.0, 0.1, 0.1};
  const std::vector<Detection> fp_below{det(0, 0, 0.9, to_xyxy(g.box)), det(0, 0, 0.5, miss)};
  EXPECT_DOUBLE_EQ(average_precision(fp_below, gts, 1).ap50, 1.0);
  const std::vector<Detection> fp_above{det(0, 0, 0.5, to_xyxy(g.box)), det(0, 0, 0.9, miss)};
  EXPECT_DOUBLE_EQ(average_precision(fp_above, gts, 1).ap50, 0.5);
}

TEST(Ap, DuplicateDetectionIsFalsePositive) {
  const GroundTruth g{0, {0.5, 0.5, 0.2, 0.2}};
  const std::vector<std::vector<GroundTruth>> gts{{g}, {g}};
  // Scene 0 gets a duplicate ranked above scene 1's true positive.
  const std::vector<Detection> dets{det(0, 0, 0.9, to_xyxy(g.box)), det(0, 0, 0.8, to_xyxy(g.box)),
                                    det(1, 0, 0.7, to_xyxy(g.box))};
  // PR points: (0.5, 1), (0.5, 0.5), (1, 2/3) -> 51·1 + 50·(2/3) over 101.
  EXPECT_NEAR(average_precision(dets, gts, 1).ap50, (51.0 + 50.0 * 2.0 / 3.0) / 101.0, 1e-12);
}

TEST(Evaluate, StrippedModelMatchesPrimaryBranch) {
  const ExperimentConfig cfg = quick_config(2);
  const auto r = train(cfg);
  const auto val = make_validation_set(cfg.data, cfg.model.num_classes, cfg.model.d_model);
  const ApResult full = evaluate(r.model, val, BranchSelector::primary(), false, 0.01);
  const ApResult lean = evaluate(strip_for_inference(r.model), val, BranchSelector::primary(), false, 0.01);
  EXPECT_EQ(full.per_threshold, lean.per_threshold);
  const ApResult aux = evaluate(r.model, val, BranchSelector::aux(1), true, 0.01);
  EXPECT_EQ(aux.per_threshold.size(), kNumIouThresholds);
  EXPECT_THROW(evaluate(r.model, val, BranchSelector::aux(2), true, 0.01), ConfigError);
}

TEST(Ablation, CellsAndSkips) {
  AblationSpec spec;
  spec.n_aux = {0, 1, 3, 4};
  spec.aux_modes = {AuxMode::kLora, AuxMode::kFullFfn};
  spec.ranks = {2, 4};
  std::vector<AblationCell> skipped;
  const auto cells = ablation_cells(spec, &skipped);
  // n_aux=0 once; n_aux in {1,3} x diverse{yes,no} x (2 ranks + full_ffn).
  EXPECT_EQ(cells.size(), 1u + 2u * 2u * 3u);
  ASSERT_EQ(skipped.size(), 2u);  // n_aux=4, both diverse and identical
  EXPECT_EQ(skipped[0].n_aux, 4u);
}

TEST(Ablation, SingleCellReproducesTrain) {
  AblationSpec spec;
  spec.base = quick_config(0);
  spec.n_aux = {0};
  spec.seeds = {5};
  const auto result = run_ablation(spec, 1);
  ASSERT_EQ(result.rows.size(), 1u);
  const auto direct = train(cell_config(spec.base, result.rows[0].cell, 5));
  EXPECT_EQ(result.rows[0].median_o2o_loss, direct.log.final_o2o_primary_loss());
  EXPECT_EQ(result.rows[0].median_ap50, direct.log.final_primary_ap50());
  EXPECT_EQ(result.rows[0].param_count, param_count(strip_for_inference(direct.model)).total());
}

TEST(Ablation, ThreadCountDoesNotChangeResults) {
  AblationSpec spec;
  spec.base = quick_config(0);
  spec.base.train.steps = 10;
  spec.n_aux = {0, 1};
  spec.diverse = {true};
  spec.seeds = {1, 2};
  std::ostringstream a, b;
  write_ablation_csv(run_ablation(spec, 1), a);
  write_ablation_csv(run_ablation(spec, 3), b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), kAblationHeader);
}

TEST(Ablation, Median) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), ValidationError);
}
