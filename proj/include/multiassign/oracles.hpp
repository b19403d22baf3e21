#pragma once

// Independent reference computations used by the test suites and by
// `multiassign selftest`. Nothing in the training path calls into this header.

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "multiassign/harness.hpp"
#include "multiassign/model.hpp"
#include "multiassign/numerics.hpp"

namespace multiassign::oracle {

// Exhaustive minimum over all injective gt->query maps; cost summed in
// ground-truth order. Feasible up to ~8 queries.
double brute_force_min_cost(const Tensor2D& cost);

Tensor2D random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0);

// Smallest |entry| of x; used to skip points near ReLU kinks.
double min_abs_entry(const Tensor2D& x);

// Predictions with uniform class scores and boxes well inside the unit square.
std::vector<Prediction> random_predictions(std::mt19937_64& rng, std::size_t n, std::size_t num_classes);
std::vector<GroundTruth> random_gts(std::mt19937_64& rng, std::size_t n, std::size_t num_classes);

// Singular values, descending, by one-sided Jacobi rotations.
std::vector<double> singular_values(const Tensor2D& m);

// Closed-form parameter counts, written independently of param_count().
ParamCount expected_param_count(const ModelConfig& cfg);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Random cost matrices (square up to 6×6, rectangular up to 8×5) against
// brute_force_min_cost; exact total-cost equality.
SuiteResult hungarian_suite(std::size_t trials, std::uint64_t seed);

// Central-difference checks on every differentiable operation at `points`
// random points each, h = 1e-5, rel err < 1e-4.
SuiteResult gradient_suite(std::size_t points, std::uint64_t seed);

// One-to-many matcher invariants on random sets: M > tau, per-gt count <= k,
// per-query count <= 1, and positives nested across k = 2, 4, 6.
SuiteResult matcher_suite(std::size_t trials, std::uint64_t seed);

// Grid argmin of the positive branch sits at p = s; negative branch at
// (0.5, gamma 1.5) equals 0.5^1.5·ln 2.
SuiteResult vfl_suite();

// Fresh models (lora and full_ffn) give exactly equal branch outputs.
SuiteResult zero_init_suite(std::size_t inputs, std::uint64_t seed);

// Primary-branch predictions equal the stripped model's, bit for bit, before
// and after `train_steps` training steps.
SuiteResult strip_invariance_suite(std::size_t inputs, std::size_t train_steps, std::uint64_t seed);

// The fixed-assignment scalar loss of the full model as a function of one
// named parameter, with the assignment frozen at the current point.
struct FrozenLoss {
  Model model;
  Tensor2D features;
  std::vector<GroundTruth> gts;
  Assignments assignments;
  LossConfig loss;

  double operator()(const std::string& param, const Tensor2D& value) const;
  // Analytic gradient of the same scalar w.r.t. every parameter.
  Model gradients() const;
};

FrozenLoss make_frozen_loss(const ExperimentConfig& cfg, std::uint64_t scene_seed);

}  // namespace multiassign::oracle
