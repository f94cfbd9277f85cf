// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pecop/cli.hpp"
#include "pecop/config.hpp"
#include "pecop/metrics.hpp"

using namespace pecop;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny{
    "backbone.stage_channels=8,16", "backbone.input_frames=16", "backbone.input_size=8",
    "pretext.clip_len=16",          "pretext.samples_per_video=2", "train.epochs=1",
    "train.batch_size=8",           "general.epochs=1",           "finetune.epochs=1",
    "data.num_videos=12",           "data.num_frames=64",         "data.size=8",
    "data.num_subjects=6"};

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pecop_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  for (const auto& s : kTiny) {
    args.push_back("--set");
    args.push_back(s);
  }
  return args;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pecop_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("empty config resolves the default schedule") {
  const RunConfig c = parse_config_text("");
  CHECK(c.epochs == 8);
  CHECK(c.batch_size == 16);
  CHECK(c.optimizer.lr == 1e-3);
  CHECK(c.optimizer.momentum == 0.9);
  CHECK(c.vspp.clip_len == 32);
  CHECK(c.vspp.num_segments == 4);
  CHECK(c.vspp.speed_classes.size() == 4);
  CHECK(c.backbone.adapter_lambda == 4);
  CHECK(c.freeze.mode == FreezeMode::adapters_only);
  CHECK(c.samples_per_video == 10);
}

TEST_CASE("sections, comments and overrides") {
  const RunConfig c = parse_config_text("# run\n[train]\nepochs = 3  # short\n[optimizer]\nlr = 0.5\n", {"train.epochs=1"});
  CHECK(c.epochs == 1);
  CHECK(c.optimizer.lr == 0.5);
  CHECK(parse_config_text("", {"epochs=1"}).epochs == 1);
}

TEST_CASE("unknown keys and bad values name the key") {
  CHECK_THROWS_WITH_AS(parse_config_text("", {"foo=1"}), "unknown key: foo", ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[train]\nepochs = many\n"), doctest::Contains("train.epochs"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("", {"optimizer.lr=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("", {"train.epochs=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("", {"train.batch_size=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("", {"novalue"}), ConfigError);
}

TEST_CASE("formatted config parses back to the same text") {
  RunConfig c = parse_config_text("", kTiny);
  const std::string text = format_config(c);
  CHECK(format_config(parse_config_text(text)) == text);
  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"desk.cfg", "paper_scale.cfg"}) {
    const fs::path p = fs::path(PECOP_SOURCE_DIR) / "configs" / name;
    CHECK_NOTHROW(parse_config(p));
  }
}

TEST_CASE("exit codes by category") {
  CHECK(exit_code_for(ErrorCategory::config) == 2);
  CHECK(exit_code_for(ErrorCategory::data) == 3);
  CHECK(exit_code_for(ErrorCategory::compatibility) == 4);
  CHECK(exit_code_for(ErrorCategory::numeric) == 5);
}

TEST_CASE("evaluate with a missing checkpoint") {
  const fs::path root = scratch("missing");
  const fs::path data = root / "data";
  REQUIRE(cli(with_tiny({"gen-data", "--out", data.string()})).code == 0);
  const Result r = cli(with_tiny({"evaluate", "--data", data.string(), "--ckpt", (root / "nope.bin").string(), "--out",
                                  (root / "eval").string()}));
  CHECK(r.code == 4);
  CHECK(r.err.find("checkpoint not found") != std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
  const Result r = cli({"gen-data", "--set", "foo=1", "--out", scratch("bad").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("unknown key: foo") != std::string::npos);
}

TEST_CASE("full pipeline smoke run") {
  const fs::path root = scratch("pipeline");
  const std::string data = (root / "data").string(), gp = (root / "gp").string(), cp = (root / "cp").string(),
                    ft = (root / "ft").string(), ev = (root / "ev").string();
  REQUIRE(cli(with_tiny({"gen-data", "--out", data, "--seed", "5"})).code == 0);
  CHECK(fs::exists(fs::path(data) / "manifest.csv"));
  REQUIRE(cli(with_tiny({"pretrain-general", "--data", data, "--out", gp})).code == 0);
  REQUIRE(cli(with_tiny({"continual-pretrain", "--data", data, "--base", gp + "/checkpoint.bin", "--out", cp})).code ==
          0);
  REQUIRE(cli(with_tiny({"finetune", "--data", data, "--ckpt", cp + "/checkpoint.bin", "--base",
                         gp + "/checkpoint.bin", "--out", ft}))
              .code == 0);
  const Result e = cli(with_tiny({"evaluate", "--data", data, "--ckpt", ft + "/checkpoint.bin", "--out", ev}));
  REQUIRE(e.code == 0);
  const EvalResult er = eval_result_from_json(slurp(fs::path(ev) / "eval.json"));
  CHECK_FALSE(er.n_videos.empty());

  for (const auto& dir : {gp, cp, ft}) {
    CHECK(fs::exists(fs::path(dir) / "checkpoint.bin"));
    CHECK(fs::exists(fs::path(dir) / "metrics.jsonl"));
    CHECK(fs::exists(fs::path(dir) / "resolved_config.txt"));
    const std::string run = slurp(fs::path(dir) / "run.json");
    CHECK(run.find("\"seed\"") != std::string::npos);
    CHECK(run.find("\"format_version\"") != std::string::npos);
  }
  // Continual pretraining stores far less than the general checkpoint.
  CHECK(fs::file_size(fs::path(cp) / "checkpoint.bin") < fs::file_size(fs::path(gp) / "checkpoint.bin"));

  const std::string report = (root / "report").string();
  const Result rp = cli({"report", "--run", "pecop:" + cp + ":" + ev, "--run", "general:" + gp, "--out", report});
  REQUIRE(rp.code == 0);
  const std::string table = slurp(fs::path(report) / "report.txt");
  CHECK(table.find("pecop") != std::string::npos);
  CHECK(table.find("general") != std::string::npos);
}
