// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pecop/error.hpp"

namespace pecop {

/// One report row: display label, training run directory, evaluation directory.
struct ReportRun {
  std::string label;
  std::filesystem::path train_dir;
  std::filesystem::path eval_dir;
};

struct CliCommand {
  std::string verb;  // gen-data | pretrain-general | continual-pretrain | finetune | evaluate | report
  std::filesystem::path config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::filesystem::path output_dir;
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path base_checkpoint;
  std::vector<ReportRun> runs;
};

/// 0 success, 2 config, 3 data, 4 compatibility, 5 runtime or numeric.
int exit_code_for(ErrorCategory category) noexcept;

/// Executes one command; failures are reported as a single line on `err`.
int run_command(const CliCommand& command, std::ostream& out, std::ostream& err);

/// Parses argv and runs the command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pecop
