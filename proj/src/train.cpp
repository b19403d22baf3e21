#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "detections.hpp"
#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"

namespace multiassign {

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train.steps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (eval_interval == 0) throw ConfigError("train.eval_interval must be positive");
  optimizer.validate();
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  data.validate(model.d_model, model.num_classes, model.n_queries);
  loss.validate();
  cost.validate();
  match.validate();
  if (!(eval.score_threshold >= 0.0)) throw ConfigError("eval.score_threshold must be nonnegative");
  if (!(eval.nms_iou >= 0.0 && eval.nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must lie in [0,1]");
  (void)strategies();
}

std::vector<MatchConfig> ExperimentConfig::strategies() const {
  const std::size_t n = model.n_aux;
  if (n == 0) return {};
  std::vector<MatchConfig> out;
  if (train.k_set.empty()) {
    out = strategy_set(n, train.diverse, match.alpha, match.tau);
  } else {
    if (train.k_set.size() != n)
      throw ConfigError("match.k_set has " + std::to_string(train.k_set.size()) + " entries but model.n_aux=" +
                        std::to_string(n));
    for (std::size_t k : train.k_set) out.push_back({match.alpha, match.tau, k});
  }
  auto override_list = [&](const std::vector<double>& values, const char* key, double MatchConfig::*field) {
    if (values.empty()) return;
    if (values.size() != n)
      throw ConfigError(std::string(key) + " has " + std::to_string(values.size()) + " entries but model.n_aux=" +
                        std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) out[i].*field = values[i];
  };
  override_list(train.tau_set, "match.tau_set", &MatchConfig::tau);
  override_list(train.alpha_set, "match.alpha_set", &MatchConfig::alpha);
  for (const auto& m : out) m.validate();
  return out;
}

double MetricsLog::final_o2o_primary_loss() const {
  if (rows.empty()) throw ValidationError("empty metrics log");
  return rows.back().o2o_primary_loss;
}

double MetricsLog::initial_o2o_primary_loss() const {
  if (rows.empty()) throw ValidationError("empty metrics log");
  return rows.front().o2o_primary_loss;
}

double MetricsLog::final_primary_ap50() const {
  if (rows.empty()) throw ValidationError("empty metrics log");
  const std::size_t last_epoch = rows.back().epoch;
  for (const auto& r : rows)
    if (r.epoch == last_epoch && r.branch == 0) return r.ap50;
  throw ValidationError("metrics log has no primary row for the last epoch");
}

void write_metrics_csv(const MetricsLog& log, std::ostream& os) {
  os << kMetricsHeader << '\n';
  char buf[256];
  for (const auto& r : log.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.branch, r.loss_cls,
                  r.loss_box, r.loss_total, r.o2o_primary_loss, r.ap50, r.map);
    os << buf;
  }
}

std::string metrics_csv(const MetricsLog& log) {
  std::ostringstream os;
  write_metrics_csv(log, os);
  return os.str();
}

namespace {

bool outputs_finite(const ModelOutput& out) {
  for (const auto& layer : out.outputs)
    for (const auto& b : layer) {
      for (double v : b.class_probs.data())
        if (!std::isfinite(v)) return false;
      for (double v : b.boxes.data())
        if (!std::isfinite(v)) return false;
    }
  return true;
}

struct EpochMetrics {
  ValidationLosses losses;
  std::vector<ApResult> ap;  // per branch
};

// One forward per validation scene serves both the losses and the detections.
EpochMetrics epoch_metrics(const Model& model, std::span<const SyntheticScene> scenes, const ExperimentConfig& cfg,
                           bool with_ap) {
  const auto strategies = cfg.strategies();
  const std::size_t n_branches = model.n_branches();
  EpochMetrics m;
  m.losses.per_branch.assign(n_branches, BranchLoss{});
  std::vector<std::vector<Detection>> dets(n_branches);
  std::vector<std::vector<GroundTruth>> gts;
  gts.reserve(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SyntheticScene& scene = scenes[s];
    const ModelOutput out = model_forward(model, scene.features);
    if (!outputs_finite(out)) throw TrainingError("non-finite model output on validation scene " + std::to_string(s));
    const Assignments asg = assign_all(out, scene.gts, cfg.cost, strategies);
    const TotalLoss tl = total_loss(out, scene.gts, asg, cfg.loss);
    for (const auto& layer : tl.report.branches) {
      for (std::size_t b = 0; b < n_branches; ++b) {
        m.losses.per_branch[b].cls += layer[b].cls;
        m.losses.per_branch[b].box += layer[b].box;
        m.losses.per_branch[b].total += layer[b].total;
      }
    }
    if (with_ap) {
      for (std::size_t b = 0; b < n_branches; ++b)
        append_detections(out.outputs.back()[b], s, b > 0, cfg.eval.score_threshold, cfg.eval.nms_iou, dets[b]);
    }
    gts.push_back(scene.gts);
  }
  const double inv = 1.0 / static_cast<double>(scenes.size());
  for (auto& bl : m.losses.per_branch) {
    bl.cls *= inv;
    bl.box *= inv;
    bl.total *= inv;
  }
  if (with_ap) {
    for (std::size_t b = 0; b < n_branches; ++b)
      m.ap.push_back(average_precision(dets[b], gts, model.config.num_classes));
  }
  return m;
}

void log_epoch(MetricsLog& log, std::size_t epoch, const EpochMetrics& m) {
  const double o2o = m.losses.per_branch[0].total;
  for (std::size_t b = 0; b < m.losses.per_branch.size(); ++b) {
    const BranchLoss& bl = m.losses.per_branch[b];
    log.rows.push_back({epoch, b, bl.cls, bl.box, bl.total, o2o, m.ap[b].ap50, m.ap[b].map});
  }
}

std::uint64_t stream_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 0x5CE4E5ull; }

}  // namespace

ValidationLosses validation_losses(const Model& model, std::span<const SyntheticScene> scenes,
                                   const ExperimentConfig& cfg) {
  return epoch_metrics(model, scenes, cfg, false).losses;
}

TrainResult train(const ExperimentConfig& cfg, const StepHook& hook) {
  cfg.validate();
  const auto strategies = cfg.strategies();
  const auto val = make_validation_set(cfg.data, cfg.model.num_classes, cfg.model.d_model);

  TrainResult result;
  result.model = Model(cfg.model);
  Model& model = result.model;
  AdamOptimizer optimizer(cfg.train.optimizer);
  Rng rng(stream_seed(cfg.train.seed));

  auto record = [&](std::size_t epoch, std::size_t step) {
    try {
      log_epoch(result.log, epoch, epoch_metrics(model, val, cfg, true));
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (cfg.train.checkpoint_every_epoch) result.epoch_checkpoints.push_back({epoch, model});
  };

  record(0, 0);
  const double grad_scale = 1.0 / static_cast<double>(cfg.train.batch_size);
  std::size_t epoch = 0;
  for (std::size_t step = 1; step <= cfg.train.steps; ++step) {
    for (std::size_t b = 0; b < cfg.train.batch_size; ++b) {
      const SyntheticScene scene = sample_scene(rng, cfg.data, cfg.model.num_classes, cfg.model.d_model);
      ForwardCache cache;
      const ModelOutput out = model_forward(model, scene.features, &cache);
      if (!outputs_finite(out)) throw TrainingError("non-finite model output at step " + std::to_string(step));
      const Assignments asg = assign_all(out, scene.gts, cfg.cost, strategies);
      const TotalLoss tl = total_loss(out, scene.gts, asg, cfg.loss, grad_scale);
      if (!std::isfinite(tl.report.grand_total) || tl.report.grand_total > 1e6) {
        std::ostringstream os;
        os << "training diverged at step " << step << " (loss " << tl.report.grand_total << ")";
        throw TrainingError(os.str());
      }
      model_backward(model, cache, out, tl.grads);
    }
    try {
      optimizer.step(model);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (hook) hook(step, model);
    if (step % cfg.train.eval_interval == 0 || step == cfg.train.steps) record(++epoch, step);
  }
  return result;
}

}  // namespace multiassign
