// multiassign: train, evaluate, ablate and self-test from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "multiassign/config.hpp"
#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"
#include "multiassign/oracles.hpp"
#include "multiassign/plot.hpp"

namespace fs = std::filesystem;
using namespace multiassign;

namespace {

// Flags shared by every subcommand. Layering: defaults < --config < the
// shortcut flags < --set, applied in that order.
struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_aux;
  std::optional<std::string> diverse;
  std::optional<std::size_t> rank;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool model_flags) {
  cmd->add_option("--config", f.config_path, "key=value config file");
  cmd->add_option("--out", f.out_dir, "output directory (default: out_dir key, 'out')");
  cmd->add_option("--set", f.sets, "override one key, e.g. --set model.rank=8 (repeatable)");
  cmd->add_option("--seed", f.seed, "sets model.seed and train.seed");
  if (model_flags) {
    cmd->add_option("--n-aux", f.n_aux, "model.n_aux");
    cmd->add_option("--diverse", f.diverse, "train.diverse (true|false)");
    cmd->add_option("--rank", f.rank, "model.rank");
  }
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) apply_config_file(cfg, f.config_path);
  if (f.seed) {
    cfg.experiment.model.seed = *f.seed;
    cfg.experiment.train.seed = *f.seed;
  }
  if (f.n_aux) cfg.experiment.model.n_aux = *f.n_aux;
  if (f.diverse) apply_setting(cfg, "train.diverse", *f.diverse);
  if (f.rank) cfg.experiment.model.rank = *f.rank;
  for (const auto& s : f.sets) apply_assignment(cfg, s);
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + cfg.out_dir + "'");
  write_file(dir / "resolved_config", resolved_config(cfg));
  return dir;
}

int cmd_train(const CommonFlags& flags) {
  const RunConfig cfg = resolve(flags);
  cfg.experiment.validate();
  const fs::path dir = prepare_out(cfg);
  const TrainResult r = train(cfg.experiment);
  const std::string csv = metrics_csv(r.log);
  write_file(dir / "metrics.csv", csv);
  std::istringstream csv_in(csv);
  write_file(dir / "loss_curve.svg", loss_curve_svg(read_metrics_csv(csv_in)));
  save_checkpoint(r.model, (dir / "checkpoint.txt").string());
  save_checkpoint(strip_for_inference(r.model), (dir / "checkpoint_stripped.txt").string());
  std::printf("final primary o2o loss %.6g (epoch 0: %.6g), primary AP50 %.4f\n", r.log.final_o2o_primary_loss(),
              r.log.initial_o2o_primary_loss(), r.log.final_primary_ap50());
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

BranchSelector parse_branch(const std::string& text) {
  if (text == "primary") return BranchSelector::primary();
  if (text.rfind("aux:", 0) == 0) {
    std::size_t i = 0;
    try {
      std::size_t used = 0;
      i = std::stoul(text.substr(4), &used);
      if (used != text.size() - 4) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw ConfigError("--branch must be 'primary' or 'aux:<i>', got '" + text + "'");
    }
    // Numbered like the metrics CSV: aux:1 is the first auxiliary branch.
    if (i == 0) throw ConfigError("--branch aux:<i> counts from 1");
    return BranchSelector{i};
  }
  throw ConfigError("--branch must be 'primary' or 'aux:<i>', got '" + text + "'");
}

struct EvalFlags {
  std::string checkpoint;
  std::string branch = "primary";
  std::string nms = "off";
  std::optional<double> score_threshold;
};

int cmd_eval(const CommonFlags& flags, const EvalFlags& ef) {
  RunConfig cfg = resolve(flags);
  if (ef.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  if (!fs::exists(ef.checkpoint)) throw CheckpointError("checkpoint '" + ef.checkpoint + "' does not exist");
  const Model model = load_checkpoint(ef.checkpoint);
  cfg.experiment.model = model.config;  // the checkpoint defines the architecture
  if (ef.score_threshold) cfg.experiment.eval.score_threshold = *ef.score_threshold;
  if (ef.nms != "on" && ef.nms != "off") throw ConfigError("--nms must be 'on' or 'off', got '" + ef.nms + "'");
  cfg.experiment.validate();
  const fs::path dir = prepare_out(cfg);
  const BranchSelector branch = parse_branch(ef.branch);
  const auto val =
      make_validation_set(cfg.experiment.data, cfg.experiment.model.num_classes, cfg.experiment.model.d_model);
  const ApResult ap = evaluate(model, val, branch, ef.nms == "on", cfg.experiment.eval.score_threshold,
                               cfg.experiment.eval.nms_iou);
  std::ostringstream table;
  table << "branch,nms,iou_threshold,ap\n";
  char buf[128];
  for (std::size_t t = 0; t < ap.per_threshold.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.2f,%.6g\n", ef.branch.c_str(), ef.nms.c_str(), 0.5 + 0.05 * t,
                  ap.per_threshold[t]);
    table << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s,%s,mean,%.6g\n", ef.branch.c_str(), ef.nms.c_str(), ap.map);
  table << buf;
  std::cout << table.str();
  write_file(dir / "eval.csv", table.str());
  return 0;
}

int cmd_ablate(const CommonFlags& flags) {
  const RunConfig cfg = resolve(flags);
  cfg.experiment.validate();
  const fs::path dir = prepare_out(cfg);
  const AblationResult r = run_ablation(cfg.ablation_spec(), default_thread_count());
  std::ostringstream os;
  write_ablation_csv(r, os);
  write_file(dir / "ablation.csv", os.str());
  std::cout << os.str();
  for (const auto& c : r.skipped)
    std::fprintf(stderr, "skipped n_aux=%zu diverse=%s: no k schedule\n", c.n_aux, c.diverse ? "true" : "false");
  return 0;
}

int cmd_selftest() {
  const std::vector<oracle::SuiteResult> results = {
      oracle::hungarian_suite(200, 1),       oracle::gradient_suite(10, 7), oracle::zero_init_suite(20, 3),
      oracle::strip_invariance_suite(10, 500, 4), oracle::matcher_suite(500, 6), oracle::vfl_suite(),
  };
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-assignment DETR desk-scale experiments"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, ablate_flags;
  EvalFlags ef;
  auto* train_cmd = app.add_subcommand("train", "train one model; writes metrics.csv, loss_curve.svg, checkpoints");
  add_common(train_cmd, train_flags, true);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the validation set");
  add_common(eval_cmd, eval_flags, false);
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--branch", ef.branch, "primary | aux:<i>");
  eval_cmd->add_option("--nms", ef.nms, "on | off");
  eval_cmd->add_option("--score-threshold", ef.score_threshold, "minimum detection score");
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid (ablate.* keys); writes ablation.csv");
  add_common(ablate_cmd, ablate_flags, true);
  auto* selftest_cmd = app.add_subcommand("selftest", "run the reference-oracle suites");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(train_flags);
    if (*eval_cmd) return cmd_eval(eval_flags, ef);
    if (*ablate_cmd) return cmd_ablate(ablate_flags);
    if (*selftest_cmd) return cmd_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
