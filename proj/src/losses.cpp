#include "multiassign/losses.hpp"

#include <algorithm>
#include <cmath>

#include "multiassign/errors.hpp"

namespace multiassign {

void LossConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("loss.gamma must be positive");
  if (lambda_cls < 0.0 || lambda_l1 < 0.0 || lambda_giou < 0.0 || aux_weight < 0.0)
    throw ConfigError("loss weights must be nonnegative");
}

ScalarGrad vfl_plus(double p, double s, int y, double gamma) {
  const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  const double log_p = std::log(pc);
  const double log_q = std::log1p(-pc);
  if (y == 1) {
    return {-s * log_p - (1.0 - s) * log_q, -s / pc + (1.0 - s) / (1.0 - pc)};
  }
  const double pg = std::pow(pc, gamma);
  return {-pg * log_q, -gamma * std::pow(pc, gamma - 1.0) * log_q + pg / (1.0 - pc)};
}

namespace {

void check_pairs(const AssignmentResult& a, std::size_t n_queries, std::size_t n_gts, std::size_t num_classes,
                 std::span<const GroundTruth> gts) {
  for (const auto& pr : a.pairs) {
    if (pr.query >= n_queries || pr.gt >= n_gts)
      throw ValidationError("assignment pair (" + std::to_string(pr.query) + ", " + std::to_string(pr.gt) +
                            ") out of range");
    if (gts[pr.gt].class_index >= num_classes)
      throw ValidationError("ground-truth class " + std::to_string(gts[pr.gt].class_index) + " out of range");
  }
}

}  // namespace

LossTerm classification_loss(const Tensor2D& class_probs, const AssignmentResult& assignment,
                             std::span<const GroundTruth> gts, const LossConfig& cfg) {
  const std::size_t n = class_probs.rows(), c = class_probs.cols();
  check_pairs(assignment, n, gts.size(), c, gts);

  // Quality target per cell, negative where unmatched.
  Tensor2D target(n, c, -1.0);
  for (const auto& pr : assignment.pairs) target(pr.query, gts[pr.gt].class_index) = pr.quality;

  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(assignment.pairs.size()));
  LossTerm out;
  out.grad = Tensor2D(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double s = target(i, j);
      const ScalarGrad v = s >= 0.0 ? vfl_plus(class_probs(i, j), s, 1, cfg.gamma)
                                    : vfl_plus(class_probs(i, j), 0.0, 0, cfg.gamma);
      out.value += v.value;
      out.grad(i, j) = v.grad * norm;
    }
  }
  out.value *= norm;
  return out;
}

BoxLoss box_loss(const Tensor2D& boxes, const AssignmentResult& assignment, std::span<const GroundTruth> gts,
                 const LossConfig& cfg) {
  BoxLoss out;
  out.grad = Tensor2D(boxes.rows(), 4);
  if (assignment.pairs.empty()) return out;
  for (const auto& pr : assignment.pairs)
    if (pr.query >= boxes.rows() || pr.gt >= gts.size()) throw ValidationError("box_loss: pair out of range");

  const double inv = 1.0 / static_cast<double>(assignment.pairs.size());
  for (const auto& pr : assignment.pairs) {
    const BoxCXCYWH pred = BoxCXCYWH::from_span(boxes.row(pr.query));
    const BoxCXCYWH& gt = gts[pr.gt].box;
    const L1Grad l1 = l1_box_with_grad(pred, gt);
    const PairGrad g = giou_with_grad(to_xyxy(pred), to_xyxy(gt));
    out.l1 += l1.value * inv;
    out.giou += (1.0 - g.value) * inv;
    const auto d_giou = xyxy_grad_to_cxcywh(g.d_a);
    for (int k = 0; k < 4; ++k)
      out.grad(pr.query, k) += inv * (cfg.lambda_l1 * l1.d_a[k] - cfg.lambda_giou * d_giou[k]);
  }
  out.value = cfg.lambda_l1 * out.l1 + cfg.lambda_giou * out.giou;
  return out;
}

double LossReport::primary_total() const { return branch_total(0); }

double LossReport::branch_total(std::size_t branch) const {
  double s = 0.0;
  for (const auto& layer : branches) s += layer.at(branch).total;
  return s;
}

std::vector<Prediction> to_predictions(const BranchOutput& branch) {
  std::vector<Prediction> preds(branch.class_probs.rows());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto row = branch.class_probs.row(i);
    preds[i].class_scores.assign(row.begin(), row.end());
    preds[i].box = BoxCXCYWH::from_span(branch.boxes.row(i));
  }
  return preds;
}

Assignments assign_all(const ModelOutput& out, std::span<const GroundTruth> gts, const CostWeights& cost,
                       std::span<const MatchConfig> strategies) {
  Assignments result(out.outputs.size());
  for (std::size_t l = 0; l < out.outputs.size(); ++l) {
    const auto& branches = out.outputs[l];
    if (branches.size() != 1 + strategies.size())
      throw ConfigError("assign_all: " + std::to_string(branches.size() - 1) + " auxiliary branches but " +
                        std::to_string(strategies.size()) + " strategies");
    result[l].reserve(branches.size());
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const auto preds = to_predictions(branches[b]);
      result[l].push_back(b == 0 ? o2o_assign(preds, gts, cost) : o2m_assign(preds, gts, strategies[b - 1]));
    }
  }
  return result;
}

TotalLoss total_loss(const ModelOutput& out, std::span<const GroundTruth> gts, const Assignments& assignments,
                     const LossConfig& cfg, double grad_scale) {
  if (assignments.size() != out.outputs.size()) throw ConfigError("total_loss: layer count mismatch");
  TotalLoss result;
  result.report.branches.resize(out.outputs.size());
  result.grads.resize(out.outputs.size());
  for (std::size_t l = 0; l < out.outputs.size(); ++l) {
    const auto& branches = out.outputs[l];
    if (assignments[l].size() != branches.size())
      throw ConfigError("total_loss: " + std::to_string(branches.size()) + " branches but " +
                        std::to_string(assignments[l].size()) + " assignments");
    const std::size_t n_aux = branches.size() - 1;
    double aux_sum = 0.0;
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const LossTerm cls = classification_loss(branches[b].class_probs, assignments[l][b], gts, cfg);
      BoxLoss box = box_loss(branches[b].boxes, assignments[l][b], gts, cfg);
      BranchLoss bl;
      bl.cls = cfg.lambda_cls * cls.value;
      bl.box = box.value;
      bl.total = bl.cls + bl.box;
      result.report.branches[l].push_back(bl);

      const double weight = b == 0 ? 1.0 : cfg.aux_weight / static_cast<double>(n_aux);
      BranchGrad g;
      g.d_probs = scale(cls.grad, grad_scale * weight * cfg.lambda_cls);
      g.d_boxes = scale(box.grad, grad_scale * weight);
      result.grads[l].push_back(std::move(g));
      if (b > 0) aux_sum += bl.total;
    }
    result.report.grand_total += result.report.branches[l][0].total;
    if (n_aux > 0) result.report.grand_total += cfg.aux_weight * aux_sum / static_cast<double>(n_aux);
  }
  return result;
}

}  // namespace multiassign
