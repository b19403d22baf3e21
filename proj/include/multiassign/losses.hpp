#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "multiassign/assignment.hpp"
#include "multiassign/model.hpp"

namespace multiassign {

struct LossConfig {
  double gamma = 1.5;
  double lambda_cls = 1.0;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  // Multiplier on the mean auxiliary loss.
  double aux_weight = 1.0;

  void validate() const;
};

inline constexpr double kProbEpsilon = 1e-7;

struct ScalarGrad {
  double value = 0.0;
  double grad = 0.0;
};

// Quality-aware classification loss on one (query, class) cell.
//   y = 1: -s·log p - (1-s)·log(1-p)
//   y = 0: -p^gamma·log(1-p)
// p is clamped to [eps, 1-eps]; the derivative is evaluated at the clamped
// point and passed through unchanged.
ScalarGrad vfl_plus(double p, double s, int y, double gamma);

struct LossTerm {
  double value = 0.0;
  Tensor2D grad;
};

// Sum of vfl_plus over every query×class cell, divided by max(1, #positives).
// A matched (query, class-of-gt) cell is positive with its pair's quality as
// target; everything else is negative.
LossTerm classification_loss(const Tensor2D& class_probs, const AssignmentResult& assignment,
                             std::span<const GroundTruth> gts, const LossConfig& cfg);

struct BoxLoss {
  double l1 = 0.0;    // mean L1 over positives (unweighted)
  double giou = 0.0;  // mean (1 - GIoU) over positives (unweighted)
  double value = 0.0; // lambda_l1·l1 + lambda_giou·giou
  Tensor2D grad;      // d value / d boxes (cx, cy, w, h)
};

BoxLoss box_loss(const Tensor2D& boxes, const AssignmentResult& assignment, std::span<const GroundTruth> gts,
                 const LossConfig& cfg);

struct BranchLoss {
  double cls = 0.0;  // lambda_cls × classification loss
  double box = 0.0;  // lambda_l1·l1 + lambda_giou·(1 - giou)
  double total = 0.0;
};

struct LossReport {
  std::vector<std::vector<BranchLoss>> branches;  // [layer][branch]
  double grand_total = 0.0;

  // Sum over layers of the primary branch's total.
  double primary_total() const;
  // Sum over layers of branch b's total.
  double branch_total(std::size_t branch) const;
};

// assignments[layer][branch]: one-to-one for branch 0, one-to-many with
// strategies[b-1] for auxiliary branch b, each on that branch's own outputs.
using Assignments = std::vector<std::vector<AssignmentResult>>;

Assignments assign_all(const ModelOutput& out, std::span<const GroundTruth> gts, const CostWeights& cost,
                       std::span<const MatchConfig> strategies);

std::vector<Prediction> to_predictions(const BranchOutput& branch);

struct TotalLoss {
  LossReport report;
  OutputGrads grads;  // gradient of grad_scale × grand_total
};

// grand_total = Σ_layers [primary + aux_weight × mean(aux)].
TotalLoss total_loss(const ModelOutput& out, std::span<const GroundTruth> gts, const Assignments& assignments,
                     const LossConfig& cfg, double grad_scale = 1.0);

}  // namespace multiassign
