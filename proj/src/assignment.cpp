#include "multiassign/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "multiassign/errors.hpp"

namespace multiassign {

void MatchConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("match alpha must lie in [0,1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("match tau must lie in [0,1]");
  if (k < 1) throw ConfigError("match k must be at least 1");
}

void CostWeights::validate() const {
  if (lambda_cls < 0.0 || lambda_l1 < 0.0 || lambda_giou < 0.0)
    throw ConfigError("cost weights must be nonnegative");
  if (lambda_cls + lambda_l1 + lambda_giou <= 0.0)
    throw ConfigError("at least one cost weight must be positive");
}

namespace {

// Dense gt-major view: cost[g * n_queries + q].
struct SubProblem {
  std::size_t n_gts = 0;
  std::size_t n_queries = 0;
  std::vector<double> cost;

  double at(std::size_t g, std::size_t q) const { return cost[g * n_queries + q]; }
};

struct Solution {
  std::vector<std::size_t> query_of_gt;
  std::vector<double> u;  // gt potentials
  std::vector<double> v;  // query potentials
  double total = 0.0;
};

// Shortest augmenting path with potentials; O(g^2 q).
Solution solve(const SubProblem& sp) {
  const std::size_t m = sp.n_gts, n = sp.n_queries;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = sp.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.query_of_gt.assign(m, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) s.query_of_gt[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  for (std::size_t g = 0; g < m; ++g) s.total += sp.at(g, s.query_of_gt[g]);
  return s;
}

SubProblem restrict(const Tensor2D& cost, std::size_t first_gt, const std::vector<std::size_t>& queries) {
  SubProblem sp;
  sp.n_gts = cost.cols() - first_gt;
  sp.n_queries = queries.size();
  sp.cost.resize(sp.n_gts * sp.n_queries);
  for (std::size_t g = 0; g < sp.n_gts; ++g)
    for (std::size_t q = 0; q < sp.n_queries; ++q) sp.cost[g * sp.n_queries + q] = cost(queries[q], first_gt + g);
  return sp;
}

}  // namespace

std::vector<QueryGtPair> hungarian(const Tensor2D& cost) {
  const std::size_t n_queries = cost.rows(), n_gts = cost.cols();
  if (!all_finite(cost)) throw ValidationError("hungarian: cost matrix contains non-finite entries");
  if (n_gts > n_queries) {
    std::ostringstream os;
    os << "hungarian: " << n_gts << " ground truths exceed " << n_queries << " queries";
    throw CapacityError(os.str());
  }
  if (n_gts == 0) return {};

  std::vector<std::size_t> available(n_queries);
  std::iota(available.begin(), available.end(), std::size_t{0});
  Solution best = solve(restrict(cost, 0, available));

  const double tol = 1e-9 * (1.0 + max_abs(cost)) * static_cast<double>(n_gts);

  // Walk ground truths in order and move each to the smallest query index that
  // still admits an optimal completion. A query can only appear in some optimal
  // matching if its edge is tight under the current optimal duals, which prunes
  // almost every candidate before the verifying re-solve.
  std::vector<QueryGtPair> result;
  result.reserve(n_gts);
  std::vector<std::size_t> current = best.query_of_gt;  // indices into `available`
  std::vector<double> u = best.u, v = best.v;
  double remaining_opt = best.total;
  for (std::size_t g = 0; g < n_gts; ++g) {
    const std::size_t local_choice = current[0];
    std::size_t chosen = local_choice;
    Solution chosen_rest;
    bool have_rest = false;
    for (std::size_t lq = 0; lq < available.size() && available[lq] < available[local_choice]; ++lq) {
      const double c = cost(available[lq], g);
      if (c - u[0] - v[lq] > tol) continue;
      std::vector<std::size_t> rest_queries = available;
      rest_queries.erase(rest_queries.begin() + static_cast<std::ptrdiff_t>(lq));
      Solution rest;
      if (g + 1 < n_gts) rest = solve(restrict(cost, g + 1, rest_queries));
      if (c + rest.total <= remaining_opt + tol) {
        chosen = lq;
        chosen_rest = std::move(rest);
        have_rest = true;
        break;
      }
    }
    const std::size_t q = available[chosen];
    result.emplace_back(q, g);
    remaining_opt -= cost(q, g);
    available.erase(available.begin() + static_cast<std::ptrdiff_t>(chosen));
    if (g + 1 == n_gts) break;

    if (have_rest) {
      current = std::move(chosen_rest.query_of_gt);
      u = std::move(chosen_rest.u);
      v = std::move(chosen_rest.v);
      remaining_opt = chosen_rest.total;
    } else {
      // Keep the previous optimum: drop this gt and reindex queries.
      std::vector<std::size_t> next(current.begin() + 1, current.end());
      for (auto& lq : next)
        if (lq > chosen) --lq;
      current = std::move(next);
      u.erase(u.begin());
      v.erase(v.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
  }
  return result;
}

double assignment_cost(const Tensor2D& cost, std::span<const QueryGtPair> pairs) {
  double total = 0.0;
  for (const auto& [q, g] : pairs) total += cost(q, g);
  return total;
}

Tensor2D o2o_cost(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                  const CostWeights& w) {
  Tensor2D cost(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const BoxXYXY pb = to_xyxy(preds[i].box);
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double p = preds[i].class_scores.at(gts[j].class_index);
      cost(i, j) = w.lambda_cls * (1.0 - p) + w.lambda_l1 * l1_box(preds[i].box, gts[j].box) +
                   w.lambda_giou * (1.0 - giou(pb, to_xyxy(gts[j].box)));
    }
  }
  return cost;
}

double match_score(const Prediction& p, const GroundTruth& y, double alpha) {
  const double c = p.class_scores.at(y.class_index);
  return alpha * c + (1.0 - alpha) * iou(to_xyxy(p.box), to_xyxy(y.box));
}

AssignmentResult o2m_assign(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                            const MatchConfig& cfg) {
  cfg.validate();
  AssignmentResult result;
  result.flavor = AssignmentFlavor::kOneToMany;
  if (gts.empty() || preds.empty()) return result;

  // Bind each query to its best ground truth (ties -> lower gt index).
  struct Candidate {
    std::size_t query;
    double score;
  };
  std::vector<std::vector<Candidate>> per_gt(gts.size());
  for (std::size_t q = 0; q < preds.size(); ++q) {
    std::size_t best_gt = 0;
    double best = match_score(preds[q], gts[0], cfg.alpha);
    for (std::size_t g = 1; g < gts.size(); ++g) {
      const double m = match_score(preds[q], gts[g], cfg.alpha);
      if (m > best) {
        best = m;
        best_gt = g;
      }
    }
    if (best > cfg.tau) per_gt[best_gt].push_back({q, best});
  }

  for (std::size_t g = 0; g < gts.size(); ++g) {
    auto& cands = per_gt[g];
    // Queries were appended in ascending order, so a stable sort keeps the
    // lower query first among equal scores.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    const std::size_t take = std::min(cfg.k, cands.size());
    for (std::size_t i = 0; i < take; ++i) result.pairs.push_back({cands[i].query, g, cands[i].score});
  }
  return result;
}

AssignmentResult o2o_assign(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                            const CostWeights& w) {
  w.validate();
  AssignmentResult result;
  result.flavor = AssignmentFlavor::kOneToOne;
  if (gts.size() > preds.size()) {
    std::ostringstream os;
    os << "o2o_assign: " << gts.size() << " ground truths exceed " << preds.size() << " queries";
    throw CapacityError(os.str());
  }
  if (gts.empty()) return result;
  const auto matches = hungarian(o2o_cost(preds, gts, w));
  for (const auto& [q, g] : matches) {
    const double s = iou(to_xyxy(preds[q].box), to_xyxy(gts[g].box));
    result.pairs.push_back({q, g, s});
  }
  return result;
}

std::vector<MatchConfig> strategy_set(std::size_t n_aux, bool diverse, double alpha, double tau) {
  std::vector<std::size_t> ks;
  if (diverse) {
    switch (n_aux) {
      case 1: ks = {6}; break;
      case 2: ks = {3, 6}; break;
      case 3: ks = {2, 4, 6}; break;
      case 5: ks = {2, 3, 4, 5, 6}; break;
      default: break;
    }
  } else if (n_aux >= 1 && n_aux <= 3) {
    ks.assign(n_aux, 6);
  }
  if (ks.empty()) {
    std::ostringstream os;
    os << "strategy_set: no " << (diverse ? "diverse" : "identical") << " k schedule for n_aux=" << n_aux
       << (diverse ? " (supported: 1, 2, 3, 5)" : " (supported: 1, 2, 3)");
    throw ConfigError(os.str());
  }
  std::vector<MatchConfig> out;
  out.reserve(ks.size());
  for (std::size_t k : ks) {
    MatchConfig cfg{alpha, tau, k};
    cfg.validate();
    out.push_back(cfg);
  }
  return out;
}

}  // namespace multiassign
