#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "multiassign/geometry.hpp"
#include "multiassign/numerics.hpp"

namespace multiassign {

struct Prediction {
  std::vector<double> class_scores;  // post-sigmoid, one per class
  BoxCXCYWH box;
};

struct GroundTruth {
  std::size_t class_index = 0;
  BoxCXCYWH box;
};

// One-to-many strategy: a query is positive for a ground truth when its
// matching score alpha*c + (1-alpha)*IoU exceeds tau, up to k per ground truth.
// alpha 0.75 / tau 0.2: with 0.5 / 0.4 no query ever clears tau on the
// synthetic task and the auxiliary branches see only negatives.
struct MatchConfig {
  double alpha = 0.75;
  double tau = 0.2;
  std::size_t k = 6;

  void validate() const;
  friend bool operator==(const MatchConfig&, const MatchConfig&) = default;
};

// Weights of the Hungarian cost terms.
struct CostWeights {
  double lambda_cls = 2.0;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;

  void validate() const;
};

enum class AssignmentFlavor { kOneToOne, kOneToMany };

struct AssignedPair {
  std::size_t query = 0;
  std::size_t gt = 0;
  double quality = 0.0;  // classification target s

  friend bool operator==(const AssignedPair&, const AssignedPair&) = default;
};

struct AssignmentResult {
  std::vector<AssignedPair> pairs;
  AssignmentFlavor flavor = AssignmentFlavor::kOneToOne;
};

using QueryGtPair = std::pair<std::size_t, std::size_t>;

/// Minimum-cost bipartite matching of every column (ground truth) to a distinct
/// row (query). The result is ordered by ground-truth index. Among equal-cost
/// optima, the sequence of query indices read in ground-truth order is the
/// lexicographically smallest one.
///
/// Throws ValidationError on a non-finite cost and CapacityError when there are
/// more columns than rows.
std::vector<QueryGtPair> hungarian(const Tensor2D& cost);

// Sum of cost(query, gt) over the pairs, accumulated in list order.
double assignment_cost(const Tensor2D& cost, std::span<const QueryGtPair> pairs);

// cost(i, j) = lambda_cls*(1 - p_i[c_j]) + lambda_l1*L1(b_i, b_j) + lambda_giou*(1 - GIoU(b_i, b_j))
Tensor2D o2o_cost(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                  const CostWeights& w);

double match_score(const Prediction& p, const GroundTruth& y, double alpha);

AssignmentResult o2m_assign(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                            const MatchConfig& cfg);

// Hungarian matching on o2o_cost; each pair's quality target is the IoU of the
// matched boxes.
AssignmentResult o2o_assign(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                            const CostWeights& w);

// k-schedules per number of auxiliary branches:
//   identical: {6}, {6,6}, {6,6,6}
//   diverse:   {6}, {3,6}, {2,4,6}, {2,3,4,5,6}
std::vector<MatchConfig> strategy_set(std::size_t n_aux, bool diverse, double alpha = 0.75,
                                      double tau = 0.2);

}  // namespace multiassign
