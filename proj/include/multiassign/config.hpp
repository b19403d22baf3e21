#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "multiassign/harness.hpp"

namespace multiassign {

// Everything a CLI run can be configured with. Keys are dotted, e.g.
// `model.rank=8`; see config_keys() for the full list.
struct RunConfig {
  ExperimentConfig experiment;
  // Grid for `ablate`; its base is `experiment`.
  std::vector<std::size_t> ablate_n_aux{0, 1, 2, 3};
  std::vector<bool> ablate_diverse{true, false};
  std::vector<AuxMode> ablate_aux_modes{AuxMode::kLora};
  std::vector<std::size_t> ablate_ranks{4};
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2, 3, 4};
  std::string out_dir = "out";

  AblationSpec ablation_spec() const;
};

// Sets one key from its text value. Unknown keys and malformed values throw
// ConfigError naming the key. Constraints across keys are checked by
// ExperimentConfig::validate, not here.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

// "key=value" form, as given to --set.
void apply_assignment(RunConfig& cfg, std::string_view assignment);

// Config file text: one key=value per line, `#` starts a comment, blank lines
// ignored. `source` names the file in error messages.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source);
void apply_config_file(RunConfig& cfg, const std::string& path);

// Every key with its current value, one per line, in config file syntax.
// Reading it back with apply_config_text reproduces the config exactly.
std::string resolved_config(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace multiassign
