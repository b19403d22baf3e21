#include <cmath>

#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"

namespace multiassign {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(box_head_lr_mult > 0.0 && box_head_lr_mult <= 1.0))
    throw ConfigError("train.box_head_lr_mult must lie in (0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be positive");
}

AdamOptimizer::AdamOptimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamOptimizer::step(std::span<const NamedParam> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.slot->value.rows(), p.slot->value.cols());
      v_.emplace_back(p.slot->value.rows(), p.slot->value.cols());
    }
  }
  if (m_.size() != params.size()) throw TrainingError("optimizer: parameter list changed between steps");
  for (const auto& p : params)
    if (!all_finite(p.slot->grad)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");

  ++t_;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradSlot& slot = *params[i].slot;
    const double lr = params[i].box_head ? cfg_.lr * cfg_.box_head_lr_mult : cfg_.lr;
    auto value = slot.value.data();
    auto grad = slot.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * grad[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * grad[j] * grad[j];
      value[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
    slot.zero_grad();
  }
}

void AdamOptimizer::step(Model& model) {
  const auto params = model.parameters();
  step(std::span<const NamedParam>(params));
}

}  // namespace multiassign
