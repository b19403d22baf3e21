#include <algorithm>
#include <numeric>

#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"
#include "detections.hpp"

namespace multiassign {

namespace {

double iou_threshold(std::size_t t) { return 0.5 + 0.05 * static_cast<double>(t); }

// AP for one class at one IoU threshold, or -1 when the class has no ground truth.
double class_ap(const std::vector<const Detection*>& dets, std::span<const std::vector<GroundTruth>> gts_per_scene,
                std::size_t cls, double threshold) {
  std::size_t n_gt = 0;
  std::vector<std::vector<char>> consumed(gts_per_scene.size());
  for (std::size_t s = 0; s < gts_per_scene.size(); ++s) {
    consumed[s].assign(gts_per_scene[s].size(), 0);
    for (const auto& g : gts_per_scene[s]) n_gt += g.class_index == cls;
  }
  if (n_gt == 0) return -1.0;

  std::vector<double> precision, recall;
  precision.reserve(dets.size());
  recall.reserve(dets.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = *dets[i];
    const auto& gts = gts_per_scene[d.scene];
    double best = threshold;
    std::ptrdiff_t best_idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_index != cls || consumed[d.scene][g]) continue;
      const double v = iou(d.box, to_xyxy(gts[g].box));
      if (v >= best) {
        best = v;
        best_idx = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_idx >= 0) {
      consumed[d.scene][static_cast<std::size_t>(best_idx)] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  // Monotone precision envelope, then sample at recall 0, 0.01, ..., 1.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double target = static_cast<double>(r) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), target - 1e-12);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

}  // namespace

ApResult average_precision(std::span<const Detection> detections,
                           std::span<const std::vector<GroundTruth>> gts_per_scene, std::size_t num_classes) {
  for (const Detection& d : detections) {
    if (d.scene >= gts_per_scene.size()) throw ValidationError("average_precision: detection scene out of range");
    if (d.class_index >= num_classes) throw ValidationError("average_precision: detection class out of range");
  }
  // Score-descending; ties keep input order.
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
  std::vector<std::vector<const Detection*>> by_class(num_classes);
  for (std::size_t i : order) by_class[detections[i].class_index].push_back(&detections[i]);

  ApResult result;
  result.per_threshold.assign(kNumIouThresholds, 0.0);
  for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double ap = class_ap(by_class[c], gts_per_scene, c, iou_threshold(t));
      if (ap < 0.0) continue;
      sum += ap;
      ++counted;
    }
    result.per_threshold[t] = counted ? sum / static_cast<double>(counted) : 0.0;
  }
  result.ap50 = result.per_threshold[0];
  result.map = std::accumulate(result.per_threshold.begin(), result.per_threshold.end(), 0.0) /
               static_cast<double>(kNumIouThresholds);
  return result;
}

void append_detections(const BranchOutput& branch, std::size_t scene, bool use_nms, double score_threshold,
                       double nms_iou, std::vector<Detection>& out) {
  const std::size_t n = branch.class_probs.rows(), c = branch.class_probs.cols();
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::vector<ScoredBox> candidates;
    for (std::size_t q = 0; q < n; ++q) {
      const double score = branch.class_probs(q, cls);
      if (score < score_threshold) continue;
      candidates.push_back({to_xyxy(BoxCXCYWH::from_span(branch.boxes.row(q))), score});
    }
    if (use_nms) {
      for (std::size_t i : nms(candidates, nms_iou)) out.push_back({scene, cls, candidates[i].score, candidates[i].box});
    } else {
      for (const ScoredBox& sb : candidates) out.push_back({scene, cls, sb.score, sb.box});
    }
  }
}

ApResult evaluate(const Model& model, std::span<const SyntheticScene> scenes, BranchSelector branch, bool use_nms,
                  double score_threshold, double nms_iou) {
  if (branch.index >= model.n_branches())
    throw ConfigError("evaluate: branch " + std::to_string(branch.index) + " does not exist (model has " +
                      std::to_string(model.config.n_aux) + " auxiliary branches)");
  // The primary branch never depends on auxiliaries; skip computing them.
  const Model stripped = branch.index == 0 && model.config.n_aux > 0 ? strip_for_inference(model) : Model{};
  const Model& runner = branch.index == 0 && model.config.n_aux > 0 ? stripped : model;
  std::vector<Detection> dets;
  std::vector<std::vector<GroundTruth>> gts;
  gts.reserve(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const ModelOutput out = model_forward(runner, scenes[s].features);
    append_detections(out.outputs.back()[branch.index], s, use_nms, score_threshold, nms_iou, dets);
    gts.push_back(scenes[s].gts);
  }
  return average_precision(dets, gts, model.config.num_classes);
}

}  // namespace multiassign
