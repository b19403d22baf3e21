#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "multiassign/assignment.hpp"
#include "multiassign/losses.hpp"
#include "multiassign/model.hpp"

namespace multiassign {

using Rng = std::mt19937_64;

// ---- synthetic task ------------------------------------------------------

struct DataConfig {
  std::size_t grid = 8;  // features are grid×grid tokens
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  double noise = 0.1;
  double onehot_scale = 4.0;  // magnitude of the one-hot entries in object tokens
  double min_size = 0.12;
  double max_size = 0.35;
  double max_pair_iou = 0.3;
  std::size_t val_scenes = 200;
  std::uint64_t val_seed = 20240917;

  void validate(std::size_t d_model, std::size_t num_classes, std::size_t n_queries) const;
};

struct SyntheticScene {
  std::vector<GroundTruth> gts;
  Tensor2D features;  // (grid·grid) × d_model
};

// Token layout for a cell that contains an object center (C classes, G = grid):
//   [0, C)              class one-hot
//   C, C+1              center offset inside the cell, in cell units [0,1)
//   C+2, C+3            width, height
//   [C+4, C+4+G)        cell column one-hot
//   [C+4+G, C+4+2G)     cell row one-hot
// One-hot entries have magnitude onehot_scale. Every entry of every token then
// receives N(0, noise²). Needs d_model >= C+4+2G.
SyntheticScene gen_scene(Rng& rng, std::size_t n_objects, std::size_t num_classes, double noise_level,
                         const DataConfig& data, std::size_t d_model);

// Reads the box back out of an object token using the layout above.
BoxCXCYWH decode_object_token(std::span<const double> token, std::size_t num_classes, std::size_t grid);

// Draws the object count uniformly in [min_objects, max_objects].
SyntheticScene sample_scene(Rng& rng, const DataConfig& data, std::size_t num_classes, std::size_t d_model);

std::vector<SyntheticScene> make_validation_set(const DataConfig& data, std::size_t num_classes,
                                                std::size_t d_model);

// ---- optimizer -----------------------------------------------------------

struct OptimizerConfig {
  double lr = 1e-3;
  double box_head_lr_mult = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Bias-corrected Adam. Parameters flagged box_head use lr × box_head_lr_mult.
// State is matched to parameters by position, so the parameter list must keep
// the same order across steps.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(OptimizerConfig cfg);

  // Updates every parameter from its gradient, then zeroes the gradients.
  // Throws TrainingError naming the first parameter with a non-finite gradient
  // (nothing is updated in that case).
  void step(std::span<const NamedParam> params);
  void step(Model& model);

  std::size_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
};

// ---- training ------------------------------------------------------------

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t eval_interval = 100;  // steps per logged epoch
  std::uint64_t seed = 0;
  bool diverse = true;
  // Optional overrides of the per-branch one-to-many strategy. When set, each
  // list must have n_aux entries.
  std::vector<std::size_t> k_set;
  std::vector<double> tau_set;
  std::vector<double> alpha_set;
  OptimizerConfig optimizer;
  bool checkpoint_every_epoch = false;

  void validate() const;
};

struct EvalConfig {
  double score_threshold = 0.01;
  double nms_iou = 0.5;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  LossConfig loss;
  CostWeights cost;
  MatchConfig match;  // alpha/tau defaults for every auxiliary branch
  EvalConfig eval;

  void validate() const;
  // One MatchConfig per auxiliary branch.
  std::vector<MatchConfig> strategies() const;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t branch = 0;  // 0 = primary
  double loss_cls = 0.0;
  double loss_box = 0.0;
  double loss_total = 0.0;
  double o2o_primary_loss = 0.0;
  double ap50 = 0.0;
  double map = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  double final_o2o_primary_loss() const;
  double initial_o2o_primary_loss() const;
  // Primary-branch AP50 of the last epoch.
  double final_primary_ap50() const;
};

inline constexpr const char* kMetricsHeader = "epoch,branch,loss_cls,loss_box,loss_total,o2o_primary_loss,ap50,map";

void write_metrics_csv(const MetricsLog& log, std::ostream& os);
std::string metrics_csv(const MetricsLog& log);

struct EpochCheckpoint {
  std::size_t epoch = 0;
  Model model;
};

struct TrainResult {
  MetricsLog log;
  Model model;
  std::vector<EpochCheckpoint> epoch_checkpoints;  // only with checkpoint_every_epoch
};

using StepHook = std::function<void(std::size_t step, const Model&)>;

// Deterministic function of the config. Epoch 0 is logged before the first
// update; epoch e after e·eval_interval updates. Every loss and AP column is
// measured on the frozen validation set with the parameters at that epoch.
TrainResult train(const ExperimentConfig& cfg, const StepHook& hook = {});

// Per-branch validation losses averaged over scenes; the loss of a scene is
// summed over decoder layers.
struct ValidationLosses {
  std::vector<BranchLoss> per_branch;
};
ValidationLosses validation_losses(const Model& model, std::span<const SyntheticScene> scenes,
                                   const ExperimentConfig& cfg);

// ---- evaluation ----------------------------------------------------------

struct Detection {
  std::size_t scene = 0;
  std::size_t class_index = 0;
  double score = 0.0;
  BoxXYXY box;
};

inline constexpr std::size_t kNumIouThresholds = 10;  // 0.50:0.95:0.05

struct ApResult {
  double ap50 = 0.0;
  double map = 0.0;
  std::vector<double> per_threshold;  // AP at 0.50, 0.55, ..., 0.95
};

// COCO-style AP over IoU thresholds 0.50:0.95:0.05 with 101-point
// interpolation; classes without ground truths are skipped.
ApResult average_precision(std::span<const Detection> detections,
                           std::span<const std::vector<GroundTruth>> gts_per_scene, std::size_t num_classes);

struct BranchSelector {
  std::size_t index = 0;  // 0 = primary, i = auxiliary branch i-1
  static BranchSelector primary() { return {0}; }
  static BranchSelector aux(std::size_t i) { return {i + 1}; }
};

// Detections from the last decoder layer of one branch: every (query, class)
// cell with score >= score_threshold, optionally filtered by per-class NMS.
ApResult evaluate(const Model& model, std::span<const SyntheticScene> scenes, BranchSelector branch, bool use_nms,
                  double score_threshold, double nms_iou = 0.5);

// ---- ablation ------------------------------------------------------------

struct AblationSpec {
  ExperimentConfig base;
  std::vector<std::size_t> n_aux{0, 1, 2, 3};
  std::vector<bool> diverse{true, false};
  std::vector<AuxMode> aux_modes{AuxMode::kLora};
  std::vector<std::size_t> ranks{4};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct AblationCell {
  std::size_t n_aux = 0;
  bool diverse = false;
  AuxMode aux_mode = AuxMode::kLora;
  std::size_t rank = 0;

  friend bool operator==(const AblationCell&, const AblationCell&) = default;
};

struct AblationRow {
  AblationCell cell;
  std::size_t seed_count = 0;
  double median_o2o_loss = 0.0;
  double median_ap50 = 0.0;
  std::size_t param_count = 0;
  std::vector<double> o2o_losses;  // per seed, in seed order
  std::vector<double> ap50s;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationCell> skipped;  // cells with no k schedule (e.g. 5 identical)
};

// Cells with n_aux = 0 collapse to a single baseline cell, full_ffn cells
// ignore rank. Runs every (cell, seed) pair on up to `threads` workers.
std::vector<AblationCell> ablation_cells(const AblationSpec& spec, std::vector<AblationCell>* skipped = nullptr);
ExperimentConfig cell_config(const ExperimentConfig& base, const AblationCell& cell, std::uint64_t seed);
AblationResult run_ablation(const AblationSpec& spec, std::size_t threads);

inline constexpr const char* kAblationHeader =
    "n_aux,diverse,aux_mode,rank,seed_count,median_o2o_loss,median_ap50,param_count";
void write_ablation_csv(const AblationResult& result, std::ostream& os);

double median(std::vector<double> values);

// MULTIASSIGN_THREADS if set and positive, else hardware concurrency (min 1).
std::size_t default_thread_count();

}  // namespace multiassign
