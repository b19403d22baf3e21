#include "multiassign/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "multiassign/errors.hpp"

namespace multiassign {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + expected + ", got '" + std::string(value) +
                    "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view text, const char* expected) {
  const std::string_view v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, text, expected);
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  return parse_number<std::size_t>(key, v, "a nonnegative integer");
}
std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  return parse_number<std::uint64_t>(key, v, "a nonnegative integer");
}
double parse_double(std::string_view key, std::string_view v) { return parse_number<double>(key, v, "a number"); }

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string_view v = trim(text);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, text, "a boolean (true/false)");
}

AuxMode parse_mode(std::string_view key, std::string_view text) {
  try {
    return parse_aux_mode(std::string(trim(text)));
  } catch (const ConfigError&) {
    bad_value(key, text, "'lora' or 'full_ffn'");
  }
}

// Comma-separated; an empty value is an empty list.
template <typename T, typename F>
std::vector<T> parse_list(std::string_view key, std::string_view text, F parse_one) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    out.push_back(parse_one(key, text.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }
std::string fmt_uint(std::uint64_t v) { return std::to_string(v); }
std::string fmt_mode(AuxMode m) { return to_string(m); }

template <typename T, typename F>
std::string join(const std::vector<T>& values, F fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt_one(values[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Accessor helpers keep the table below to one line per key.
#define MA_SIZE(NAME, FIELD)                                                                             \
  Key {                                                                                                  \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_size(k, v); },     \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                       \
  }
#define MA_U64(NAME, FIELD)                                                                              \
  Key {                                                                                                  \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_u64(k, v); },      \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                       \
  }
#define MA_DOUBLE(NAME, FIELD)                                                                           \
  Key {                                                                                                  \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_double(k, v); },   \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                                           \
  }
#define MA_BOOL(NAME, FIELD)                                                                             \
  Key {                                                                                                  \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_bool(k, v); },     \
        [](const RunConfig& c) { return fmt_bool(c.FIELD); }                                             \
  }
#define MA_LIST(NAME, FIELD, T, PARSE, FMT)                                                              \
  Key {                                                                                                  \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_list<T>(k, v, PARSE); }, \
        [](const RunConfig& c) { return join(c.FIELD, FMT); }                                            \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      MA_SIZE("model.d_model", experiment.model.d_model),
      MA_SIZE("model.d_hidden", experiment.model.d_hidden),
      MA_SIZE("model.n_layers", experiment.model.n_layers),
      MA_SIZE("model.n_queries", experiment.model.n_queries),
      MA_SIZE("model.num_classes", experiment.model.num_classes),
      MA_SIZE("model.n_aux", experiment.model.n_aux),
      MA_SIZE("model.rank", experiment.model.rank),
      Key{"model.aux_mode",
          [](RunConfig& c, std::string_view k, std::string_view v) { c.experiment.model.aux_mode = parse_mode(k, v); },
          [](const RunConfig& c) { return to_string(c.experiment.model.aux_mode); }},
      MA_U64("model.seed", experiment.model.seed),

      MA_SIZE("train.steps", experiment.train.steps),
      MA_SIZE("train.batch_size", experiment.train.batch_size),
      MA_SIZE("train.eval_interval", experiment.train.eval_interval),
      MA_U64("train.seed", experiment.train.seed),
      MA_BOOL("train.diverse", experiment.train.diverse),
      MA_BOOL("train.checkpoint_every_epoch", experiment.train.checkpoint_every_epoch),
      MA_DOUBLE("train.lr", experiment.train.optimizer.lr),
      MA_DOUBLE("train.box_head_lr_mult", experiment.train.optimizer.box_head_lr_mult),
      MA_DOUBLE("train.beta1", experiment.train.optimizer.beta1),
      MA_DOUBLE("train.beta2", experiment.train.optimizer.beta2),
      MA_DOUBLE("train.eps", experiment.train.optimizer.eps),

      MA_DOUBLE("match.alpha", experiment.match.alpha),
      MA_DOUBLE("match.tau", experiment.match.tau),
      MA_LIST("match.k_set", experiment.train.k_set, std::size_t, parse_size, fmt_uint),
      MA_LIST("match.tau_set", experiment.train.tau_set, double, parse_double, fmt_double),
      MA_LIST("match.alpha_set", experiment.train.alpha_set, double, parse_double, fmt_double),

      MA_DOUBLE("cost.lambda_cls", experiment.cost.lambda_cls),
      MA_DOUBLE("cost.lambda_l1", experiment.cost.lambda_l1),
      MA_DOUBLE("cost.lambda_giou", experiment.cost.lambda_giou),

      MA_DOUBLE("loss.gamma", experiment.loss.gamma),
      MA_DOUBLE("loss.lambda_cls", experiment.loss.lambda_cls),
      MA_DOUBLE("loss.lambda_l1", experiment.loss.lambda_l1),
      MA_DOUBLE("loss.lambda_giou", experiment.loss.lambda_giou),
      MA_DOUBLE("loss.aux_weight", experiment.loss.aux_weight),

      MA_SIZE("data.grid", experiment.data.grid),
      MA_SIZE("data.min_objects", experiment.data.min_objects),
      MA_SIZE("data.max_objects", experiment.data.max_objects),
      MA_DOUBLE("data.noise", experiment.data.noise),
      MA_DOUBLE("data.onehot_scale", experiment.data.onehot_scale),
      MA_DOUBLE("data.min_size", experiment.data.min_size),
      MA_DOUBLE("data.max_size", experiment.data.max_size),
      MA_DOUBLE("data.max_pair_iou", experiment.data.max_pair_iou),
      MA_SIZE("data.val_scenes", experiment.data.val_scenes),
      MA_U64("data.val_seed", experiment.data.val_seed),

      MA_DOUBLE("eval.score_threshold", experiment.eval.score_threshold),
      MA_DOUBLE("eval.nms_iou", experiment.eval.nms_iou),

      MA_LIST("ablate.n_aux", ablate_n_aux, std::size_t, parse_size, fmt_uint),
      MA_LIST("ablate.diverse", ablate_diverse, bool, parse_bool, fmt_bool),
      MA_LIST("ablate.aux_modes", ablate_aux_modes, AuxMode, parse_mode, fmt_mode),
      MA_LIST("ablate.ranks", ablate_ranks, std::size_t, parse_size, fmt_uint),
      MA_LIST("ablate.seeds", ablate_seeds, std::uint64_t, parse_u64, fmt_uint),

      Key{"out_dir", [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(trim(v)); },
          [](const RunConfig& c) { return c.out_dir; }},
  };
  return keys;
}

#undef MA_SIZE
#undef MA_U64
#undef MA_DOUBLE
#undef MA_BOOL
#undef MA_LIST

}  // namespace

AblationSpec RunConfig::ablation_spec() const {
  AblationSpec spec;
  spec.base = experiment;
  spec.n_aux = ablate_n_aux;
  spec.diverse = ablate_diverse;
  spec.aux_modes = ablate_aux_modes;
  spec.ranks = ablate_ranks;
  spec.seeds = ablate_seeds;
  return spec;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const std::string_view k = trim(key);
  for (const Key& entry : key_table()) {
    if (entry.name == k) {
      entry.set(cfg, k, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(k) + "'");
}

void apply_assignment(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  for (const Key& entry : key_table()) out += entry.name + "=" + entry.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& entry : key_table()) out.push_back(entry.name);
  return out;
}

}  // namespace multiassign
