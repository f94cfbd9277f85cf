// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration and its plain-text form.
//
// Files hold one `key = value` per line with dotted keys; a `[section]`
// line prefixes the keys that follow it. `#` starts a comment. Lists are
// comma-separated. Overrides use the same `key=value` form and apply last.

#include <filesystem>
#include <string>
#include <vector>

#include "pecop/backbone.hpp"
#include "pecop/data.hpp"
#include "pecop/heads.hpp"
#include "pecop/pretext.hpp"

namespace pecop {

enum class Stage { pretrain_general, continual_pretrain, finetune };
enum class PretextKind { vspp, videopace };
enum class HeadKind { usdl, pairwise };

const char* to_string(Stage stage) noexcept;
const char* to_string(PretextKind kind) noexcept;
const char* to_string(HeadKind kind) noexcept;

struct OptimizerConfig {
  double lr = 1e-3;
  double momentum = 0.9;
};

/// Supervised stage settings (general pretraining and fine-tuning).
struct SupervisedConfig {
  int64_t epochs = 8;
  double lr = 1e-2;
  int64_t batch_size = 16;
  int64_t clips_per_video = 1;
};

struct RunConfig {
  Stage stage = Stage::continual_pretrain;
  uint64_t seed = 0;

  BackboneSpec backbone;
  FreezePolicy freeze;

  // Continual pretraining.
  PretextKind pretext = PretextKind::vspp;
  VsppConfig vspp;
  std::vector<int64_t> videopace_classes{1, 2, 3, 4};
  int64_t samples_per_video = 10;
  OptimizerConfig optimizer;
  int64_t epochs = 8;
  int64_t batch_size = 16;

  Augmentation augment;  // crop_size 0 follows backbone.input_size

  SupervisedConfig general{8, 1e-2, 16, 2};

  HeadKind head = HeadKind::usdl;
  SupervisedConfig finetune{20, 1e-2, 16, 1};
  double finetune_momentum = 0.9;
  bool finetune_adapters_only = false;
  ScoreSupport support = ScoreSupport::severity_0_to_4();
  double usdl_sigma = 1.0;  // in bin widths
  int64_t pairwise_exemplars = 5;
  int64_t eval_clips = 1;

  SyntheticGrid data{200, 128, 64, RateQuantizer{}, 0.02, Domain::target, 40, 0.75, false, ""};

  void validate() const;
  /// Clip length for supervised stages.
  int64_t clip_len() const { return backbone.input_frames; }
  Augmentation train_augmentation() const;
  Augmentation eval_augmentation() const;
};

/// Parses config text; unknown keys and malformed values raise ConfigError naming the key.
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                            RunConfig defaults = {});
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Applies one `key=value` assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Every key with its resolved value, one `key = value` per line, sorted.
std::string format_config(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace pecop
