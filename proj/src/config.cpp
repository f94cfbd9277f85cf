// SPDX-License-Identifier: Apache-2.0
#include "pecop/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "pecop/binary_io.hpp"

namespace pecop {

const char* to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::pretrain_general: return "pretrain_general";
    case Stage::continual_pretrain: return "continual_pretrain";
    case Stage::finetune: return "finetune";
  }
  return "?";
}

const char* to_string(PretextKind kind) noexcept { return kind == PretextKind::vspp ? "vspp" : "videopace"; }
const char* to_string(HeadKind kind) noexcept { return kind == HeadKind::usdl ? "usdl" : "pairwise"; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& expected, const std::string& value) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, "an integer", v);
  return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, "a non-negative integer", v);
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, "a finite number", v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, "a number", v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, "true or false", v);
}

std::vector<int64_t> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
  if (out.empty()) bad_value(key, "a comma-separated integer list", v);
  return out;
}

std::string real_text(double d) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  (void)ec;
  return std::string(buf, ptr);
}

std::string list_text(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
};

template <typename Get, typename Set>
Field field(Get get, Set set) {
  return {get, set};
}

#define PECOP_INT_FIELD(member)                                                                    \
  field([](const RunConfig& c) { return std::to_string(c.member); },                               \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); })
#define PECOP_REAL_FIELD(member)                                                                   \
  field([](const RunConfig& c) { return real_text(c.member); },                                    \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_real(k, v); })
#define PECOP_BOOL_FIELD(member)                                                                   \
  field([](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },              \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); })
#define PECOP_LIST_FIELD(member)                                                                   \
  field([](const RunConfig& c) { return list_text(c.member); },                                    \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int_list(k, v); })

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"seed", field([](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_uint(k, v); })},

      {"backbone.family",
       field([](const RunConfig& c) { return std::string(to_string(c.backbone.family)); },
             [](RunConfig& c, const std::string&, const std::string& v) {
               c.backbone.family = backbone_family_from_string(v);
             })},
      {"backbone.stage_channels", PECOP_LIST_FIELD(backbone.stage_channels)},
      {"backbone.blocks_per_stage", PECOP_LIST_FIELD(backbone.blocks_per_stage)},
      {"backbone.input_frames", PECOP_INT_FIELD(backbone.input_frames)},
      {"backbone.input_size", PECOP_INT_FIELD(backbone.input_size)},
      {"backbone.stem_channels", PECOP_INT_FIELD(backbone.stem_channels)},
      {"backbone.adapter_lambda", PECOP_INT_FIELD(backbone.adapter_lambda)},
      {"backbone.adapter_kernel", PECOP_INT_FIELD(backbone.adapter_kernel)},
      {"backbone.adapter_init",
       field([](const RunConfig& c) { return std::string(to_string(c.backbone.adapter_init)); },
             [](RunConfig& c, const std::string&, const std::string& v) {
               c.backbone.adapter_init = adapter_init_from_string(v);
             })},
      {"backbone.with_adapters", PECOP_BOOL_FIELD(backbone.with_adapters)},

      {"freeze.mode", field([](const RunConfig& c) { return std::string(to_string(c.freeze.mode)); },
                            [](RunConfig& c, const std::string&, const std::string& v) {
                              c.freeze.mode = freeze_mode_from_string(v);
                            })},
      {"freeze.heads_trainable", PECOP_BOOL_FIELD(freeze.heads_trainable)},

      {"pretext.kind", field([](const RunConfig& c) { return std::string(to_string(c.pretext)); },
                             [](RunConfig& c, const std::string& k, const std::string& v) {
                               if (v == "vspp") {
                                 c.pretext = PretextKind::vspp;
                               } else if (v == "videopace") {
                                 c.pretext = PretextKind::videopace;
                               } else {
                                 bad_value(k, "vspp or videopace", v);
                               }
                             })},
      {"pretext.clip_len", PECOP_INT_FIELD(vspp.clip_len)},
      {"pretext.num_segments", PECOP_INT_FIELD(vspp.num_segments)},
      {"pretext.speed_classes", PECOP_LIST_FIELD(vspp.speed_classes)},
      {"pretext.videopace_classes", PECOP_LIST_FIELD(videopace_classes)},
      {"pretext.samples_per_video", PECOP_INT_FIELD(samples_per_video)},

      {"train.epochs", PECOP_INT_FIELD(epochs)},
      {"train.batch_size", PECOP_INT_FIELD(batch_size)},
      {"optimizer.lr", PECOP_REAL_FIELD(optimizer.lr)},
      {"optimizer.momentum", PECOP_REAL_FIELD(optimizer.momentum)},

      {"augment.crop_size", PECOP_INT_FIELD(augment.crop_size)},
      {"augment.random_crop", PECOP_BOOL_FIELD(augment.random_crop)},
      {"augment.horizontal_flip", PECOP_BOOL_FIELD(augment.horizontal_flip)},
      {"augment.brightness",
       field([](const RunConfig& c) { return real_text(c.augment.brightness); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.augment.brightness = static_cast<float>(to_real(k, v));
             })},
      {"augment.contrast",
       field([](const RunConfig& c) { return real_text(c.augment.contrast); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.augment.contrast = static_cast<float>(to_real(k, v));
             })},

      {"general.epochs", PECOP_INT_FIELD(general.epochs)},
      {"general.lr", PECOP_REAL_FIELD(general.lr)},
      {"general.batch_size", PECOP_INT_FIELD(general.batch_size)},
      {"general.clips_per_video", PECOP_INT_FIELD(general.clips_per_video)},

      {"finetune.head", field([](const RunConfig& c) { return std::string(to_string(c.head)); },
                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                if (v == "usdl") {
                                  c.head = HeadKind::usdl;
                                } else if (v == "pairwise") {
                                  c.head = HeadKind::pairwise;
                                } else {
                                  bad_value(k, "usdl or pairwise", v);
                                }
                              })},
      {"finetune.epochs", PECOP_INT_FIELD(finetune.epochs)},
      {"finetune.lr", PECOP_REAL_FIELD(finetune.lr)},
      {"finetune.momentum", PECOP_REAL_FIELD(finetune_momentum)},
      {"finetune.batch_size", PECOP_INT_FIELD(finetune.batch_size)},
      {"finetune.clips_per_video", PECOP_INT_FIELD(finetune.clips_per_video)},
      {"finetune.adapters_only", PECOP_BOOL_FIELD(finetune_adapters_only)},
      {"finetune.sigma", PECOP_REAL_FIELD(usdl_sigma)},
      {"finetune.min_score", PECOP_REAL_FIELD(support.min_score)},
      {"finetune.max_score", PECOP_REAL_FIELD(support.max_score)},
      {"finetune.num_bins", PECOP_INT_FIELD(support.num_bins)},
      {"finetune.exemplars", PECOP_INT_FIELD(pairwise_exemplars)},
      {"eval.clips", PECOP_INT_FIELD(eval_clips)},

      {"data.num_videos", PECOP_INT_FIELD(data.num_videos)},
      {"data.num_frames", PECOP_INT_FIELD(data.num_frames)},
      {"data.size", PECOP_INT_FIELD(data.size)},
      {"data.noise", PECOP_REAL_FIELD(data.noise_level)},
      {"data.num_subjects", PECOP_INT_FIELD(data.num_subjects)},
      {"data.train_fraction", PECOP_REAL_FIELD(data.train_subject_fraction)},
      {"data.min_rate", PECOP_REAL_FIELD(data.quantizer.min_rate)},
      {"data.max_rate", PECOP_REAL_FIELD(data.quantizer.max_rate)},
      {"data.domain", field([](const RunConfig& c) { return std::string(to_string(c.data.domain)); },
                            [](RunConfig& c, const std::string&, const std::string& v) {
                              c.data.domain = domain_from_string(v);
                            })},
      {"data.task_includes_axis", PECOP_BOOL_FIELD(data.task_includes_axis)},
  };
  return table;
}

#undef PECOP_INT_FIELD
#undef PECOP_REAL_FIELD
#undef PECOP_BOOL_FIELD
#undef PECOP_LIST_FIELD

void apply_assignment(RunConfig& config, const std::string& assignment, const std::string& where) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(where + "expected key=value, got '" + assignment + "'");
  set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

// Short names for the continual-pretraining schedule.
const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a{{"epochs", "train.epochs"},
                                                    {"batch_size", "train.batch_size"},
                                                    {"lr", "optimizer.lr"},
                                                    {"momentum", "optimizer.momentum"}};
  return a;
}

}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto alias = aliases().find(key);
  auto it = table.find(alias == aliases().end() ? key : alias->second);
  if (it == table.end()) throw ConfigError("unknown key: " + key);
  it->second.set(config, key, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(config) + "\n";
  return out;
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides, RunConfig defaults) {
  RunConfig config = std::move(defaults);
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    set_config_value(config, key, trim(line.substr(eq + 1)));
  }
  for (const auto& o : overrides) apply_assignment(config, o, "override: ");
  config.validate();
  return config;
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config_text(binary::read_file(path), overrides);
}

void RunConfig::validate() const {
  backbone.validate();
  vspp.validate();
  support.validate();
  data.validate();
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (samples_per_video < 1) throw ConfigError("pretext.samples_per_video must be at least 1");
  for (const auto* s : {&general, &finetune}) {
    if (!(s->lr > 0.0)) throw ConfigError("general.lr and finetune.lr must be positive");
    if (s->epochs < 0) throw ConfigError("general.epochs and finetune.epochs must be non-negative");
    if (s->batch_size < 1 || s->clips_per_video < 1) {
      throw ConfigError("batch_size and clips_per_video must be at least 1");
    }
  }
  if (finetune_momentum < 0.0 || finetune_momentum >= 1.0) throw ConfigError("finetune.momentum must lie in [0, 1)");
  if (!(usdl_sigma > 0.0)) throw ConfigError("finetune.sigma must be positive");
  if (pairwise_exemplars < 1) throw ConfigError("finetune.exemplars must be at least 1");
  if (eval_clips < 1) throw ConfigError("eval.clips must be at least 1");
  if (videopace_classes.empty()) throw ConfigError("pretext.videopace_classes must not be empty");
  if (augment.crop_size < 0) throw ConfigError("augment.crop_size must be non-negative");
}

Augmentation RunConfig::train_augmentation() const {
  Augmentation a = augment;
  if (a.crop_size == 0) a.crop_size = backbone.input_size;
  return a;
}

Augmentation RunConfig::eval_augmentation() const { return Augmentation::center(train_augmentation().crop_size); }

}  // namespace pecop
