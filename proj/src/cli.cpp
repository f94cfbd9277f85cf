// SPDX-License-Identifier: Apache-2.0
#include "pecop/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pecop/binary_io.hpp"
#include "pecop/metrics.hpp"
#include "pecop/trainer.hpp"

namespace pecop {

int exit_code_for(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::compatibility: return 4;
    case ErrorCategory::shape:
    case ErrorCategory::numeric:
    case ErrorCategory::metric: return 5;
  }
  return 5;
}

namespace {

constexpr const char* kCheckpointFile = "checkpoint.bin";
constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kConfigFile = "resolved_config.txt";
constexpr const char* kRunFile = "run.json";
constexpr const char* kEvalFile = "eval.json";

std::filesystem::path output_root(const std::filesystem::path& out) {
  if (out.empty()) throw ConfigError("--out is required");
  const char* root = std::getenv("PECOP_OUTPUT_ROOT");
  if (root && *root && out.is_relative()) return std::filesystem::path(root) / out;
  return out;
}

RunConfig resolve_config(const CliCommand& cmd, Stage stage) {
  std::vector<std::string> overrides = cmd.overrides;
  if (cmd.seed) overrides.push_back("seed=" + std::to_string(*cmd.seed));
  RunConfig cfg = cmd.config_path.empty() ? parse_config_text("", overrides) : parse_config(cmd.config_path, overrides);
  cfg.stage = stage;
  return cfg;
}

void require_path(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required for this command");
}

LoadedDataset load_split(const CliCommand& cmd, const RunConfig& cfg, const std::string& split) {
  require_path(cmd.data_dir, "--data");
  ManifestOptions opts{static_cast<int>(std::ceil(cfg.support.min_score)),
                       static_cast<int>(std::floor(cfg.support.max_score))};
  LoadedDataset all = load_dataset(cmd.data_dir, opts);
  LoadedDataset part = select_split(all, split);
  if (part.videos.empty()) throw DataError("dataset has no '" + split + "' records");
  return part;
}

/// Creates the run directory and writes the provenance files.
std::filesystem::path start_run(const CliCommand& cmd, const RunConfig& cfg) {
  const auto dir = output_root(cmd.output_dir);
  std::filesystem::create_directories(dir);
  binary::write_file_atomic(dir / kConfigFile, format_config(cfg));
  nlohmann::ordered_json j;
  j["verb"] = cmd.verb;
  j["seed"] = cfg.seed;
  j["format_version"] = kCheckpointFormatVersion;
  binary::write_file_atomic(dir / kRunFile, j.dump(2) + "\n");
  std::filesystem::remove(dir / kMetricsFile);
  return dir;
}

void write_training_outputs(const std::filesystem::path& dir, const CliCommand& cmd, const RunConfig& cfg,
                            const StageResult& result, Model* accounting_model, int64_t epochs) {
  const std::string bytes = serialize_checkpoint(result.checkpoint);
  binary::write_file_atomic(dir / kCheckpointFile, bytes);
  nlohmann::ordered_json j;
  j["verb"] = cmd.verb;
  j["seed"] = cfg.seed;
  j["format_version"] = kCheckpointFormatVersion;
  j["epochs"] = epochs;
  j["checkpoint_bytes"] = bytes.size();
  j["included"] = to_string(result.checkpoint.included);
  if (accounting_model) {
    const auto report = trainability_report(*accounting_model);
    j["trainable_params"] = report.trainable;
    j["total_params"] = report.total;
  }
  if (!result.epoch_losses.empty()) j["final_epoch_loss"] = result.epoch_losses.back();
  binary::write_file_atomic(dir / kRunFile, j.dump(2) + "\n");
}

std::optional<Checkpoint> optional_checkpoint(const std::filesystem::path& p) {
  if (p.empty()) return std::nullopt;
  return load_checkpoint(p);
}

int gen_data(const CliCommand& cmd, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd, Stage::pretrain_general);
  const auto dir = output_root(cmd.output_dir);
  std::filesystem::create_directories(dir);
  const auto ds = generate_synthetic_dataset(cfg.data, cfg.seed);
  save_dataset(dir, ds);
  binary::write_file_atomic(dir / kConfigFile, format_config(cfg));
  out << "wrote " << ds.videos.size() << " videos to " << dir.string() << "\n";
  return 0;
}

int pretrain_general(const CliCommand& cmd, std::ostream& out) {
  const RunConfig cfg = resolve_config(cmd, Stage::pretrain_general);
  const auto data = load_split(cmd, cfg, "train");
  const auto dir = start_run(cmd, cfg);
  JsonlMetricsSink sink(dir / kMetricsFile);
  const StageResult r = run_pretrain_general(cfg, data, &sink);
  Model m = restore_model(cfg, r.checkpoint);
  apply_freeze_policy(m, {FreezeMode::full, true});
  write_training_outputs(dir, cmd, cfg, r, &m, cfg.general.epochs);
  out << "pretrain-general: final loss " << r.epoch_losses.back() << "\n";
  return 0;
}

int continual_pretrain(const CliCommand& cmd, std::ostream& out) {
  const RunConfig cfg = resolve_config(cmd, Stage::continual_pretrain);
  require_path(cmd.base_checkpoint, "--base");
  const Checkpoint base = load_checkpoint(cmd.base_checkpoint);
  const auto data = load_split(cmd, cfg, "train");
  const auto dir = start_run(cmd, cfg);
  JsonlMetricsSink sink(dir / kMetricsFile);
  const StageResult r = run_continual_pretrain(cfg, base, data, &sink);
  Model m(cfg.backbone, 0);
  apply_freeze_policy(m, {cfg.freeze.mode, false});
  write_training_outputs(dir, cmd, cfg, r, &m, cfg.epochs);
  out << "continual-pretrain: final loss " << r.epoch_losses.back() << "\n";
  return 0;
}

int finetune(const CliCommand& cmd, std::ostream& out) {
  const RunConfig cfg = resolve_config(cmd, Stage::finetune);
  require_path(cmd.checkpoint, "--ckpt");
  const Checkpoint ckpt = load_checkpoint(cmd.checkpoint);
  const auto base = optional_checkpoint(cmd.base_checkpoint);
  const auto data = load_split(cmd, cfg, "train");
  const auto dir = start_run(cmd, cfg);
  JsonlMetricsSink sink(dir / kMetricsFile);
  const StageResult r = run_finetune(cfg, ckpt, base ? &*base : nullptr, data, &sink);
  write_training_outputs(dir, cmd, cfg, r, nullptr, cfg.finetune.epochs);
  out << "finetune: final loss " << (r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back()) << "\n";
  return 0;
}

int evaluate(const CliCommand& cmd, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(cmd, Stage::finetune);
  require_path(cmd.checkpoint, "--ckpt");
  const Checkpoint ckpt = load_checkpoint(cmd.checkpoint);
  const auto base = optional_checkpoint(cmd.base_checkpoint);
  const auto test = load_split(cmd, cfg, "test");
  const auto train = load_split(cmd, cfg, "train");
  const auto dir = start_run(cmd, cfg);
  Model model = restore_model(cfg, ckpt, base ? &*base : nullptr);
  const EvalResult result = evaluate_model(model, cfg, test, &train);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  binary::write_file_atomic(dir / kEvalFile, to_json(result) + "\n");
  for (const auto& [task, s] : result.per_task) out << task << ": S = " << s << "\n";
  out << "average S = " << result.average << "\n";
  return 0;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("missing " + path.string());
  try {
    return nlohmann::json::parse(binary::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

int report(const CliCommand& cmd, std::ostream& out) {
  if (cmd.runs.empty()) throw ConfigError("report needs at least one --run");
  std::vector<RunSummary> runs;
  for (const auto& r : cmd.runs) {
    const auto info = read_json(r.train_dir / kRunFile);
    RunSummary s;
    s.label = r.label;
    s.epochs = info.value("epochs", int64_t{0});
    s.checkpoint_bytes = info.value("checkpoint_bytes", int64_t{0});
    s.trainability.trainable = info.value("trainable_params", int64_t{0});
    s.trainability.total = info.value("total_params", int64_t{0});
    if (!r.eval_dir.empty()) s.eval = eval_result_from_json(binary::read_file(r.eval_dir / kEvalFile));
    runs.push_back(std::move(s));
  }
  const ComparisonReport rep = comparison_report(runs);
  out << rep.table;
  if (!cmd.output_dir.empty()) {
    const auto dir = output_root(cmd.output_dir);
    std::filesystem::create_directories(dir);
    binary::write_file_atomic(dir / "report.txt", rep.table);
    std::string lines;
    for (const auto& l : rep.records) lines += l + "\n";
    binary::write_file_atomic(dir / "report.jsonl", lines);
  }
  return 0;
}

ReportRun parse_run_spec(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() < 2 || parts.size() > 3 || parts[0].empty()) {
    throw ConfigError("--run expects LABEL:TRAIN_DIR[:EVAL_DIR], got '" + spec + "'");
  }
  return {parts[0], parts[1], parts.size() == 3 ? std::filesystem::path(parts[2]) : std::filesystem::path()};
}

}  // namespace

int run_command(const CliCommand& cmd, std::ostream& out, std::ostream& err) {
  try {
    if (cmd.verb == "gen-data") return gen_data(cmd, out);
    if (cmd.verb == "pretrain-general") return pretrain_general(cmd, out);
    if (cmd.verb == "continual-pretrain") return continual_pretrain(cmd, out);
    if (cmd.verb == "finetune") return finetune(cmd, out);
    if (cmd.verb == "evaluate") return evaluate(cmd, out, err);
    if (cmd.verb == "report") return report(cmd, out);
    throw ConfigError("unknown command: " + cmd.verb);
  } catch (const Error& e) {
    err << "error (" << category_name(e.category()) << "): " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    err << "error (runtime): " << e.what() << "\n";
    return 5;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-efficient continual pretraining for 3D video backbones"};
  app.require_subcommand(1);
  CliCommand cmd;
  std::vector<std::string> run_specs;
  uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cmd.config_path, "Run configuration file");
    sub->add_option("--set", cmd.overrides, "Override key=value (repeatable)");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--out", cmd.output_dir, "Output directory")->required();
  };
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset");
  add_common(gen);
  auto* gp = app.add_subcommand("pretrain-general", "Supervised general-domain pretraining");
  add_common(gp);
  gp->add_option("--data", cmd.data_dir, "Dataset directory")->required();
  auto* cp = app.add_subcommand("continual-pretrain", "Pretext continual pretraining");
  add_common(cp);
  cp->add_option("--data", cmd.data_dir, "Dataset directory")->required();
  cp->add_option("--base", cmd.base_checkpoint, "General-pretrained checkpoint")->required();
  auto* ft = app.add_subcommand("finetune", "Supervised fine-tuning");
  add_common(ft);
  ft->add_option("--data", cmd.data_dir, "Dataset directory")->required();
  ft->add_option("--ckpt", cmd.checkpoint, "Checkpoint to start from")->required();
  ft->add_option("--base", cmd.base_checkpoint, "Base checkpoint for trainable_only inputs");
  auto* ev = app.add_subcommand("evaluate", "Spearman evaluation on the test split");
  add_common(ev);
  ev->add_option("--data", cmd.data_dir, "Dataset directory")->required();
  ev->add_option("--ckpt", cmd.checkpoint, "Fine-tuned checkpoint")->required();
  ev->add_option("--base", cmd.base_checkpoint, "Base checkpoint for trainable_only inputs");
  auto* rp = app.add_subcommand("report", "Comparison table over runs");
  rp->add_option("--run", run_specs, "LABEL:TRAIN_DIR[:EVAL_DIR] (repeatable)")->required();
  rp->add_option("--out", cmd.output_dir, "Directory for report.txt and report.jsonl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error (config): " << e.what() << "\n";
    return 2;
  }
  cmd.verb = app.get_subcommands().front()->get_name();
  if (const auto* opt = app.get_subcommands().front()->get_option_no_throw("--seed"); opt && opt->count()) {
    cmd.seed = seed;
  }
  try {
    for (const auto& s : run_specs) cmd.runs.push_back(parse_run_spec(s));
  } catch (const Error& e) {
    err << "error (config): " << e.what() << "\n";
    return 2;
  }
  return run_command(cmd, out, err);
}

}  // namespace pecop
