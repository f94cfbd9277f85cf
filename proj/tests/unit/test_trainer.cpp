// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "pecop/trainer.hpp"

using namespace pecop;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 3;
  c.backbone.stage_channels = {8, 16};
  c.backbone.input_frames = 16;
  c.backbone.input_size = 8;
  c.vspp.clip_len = 16;
  c.samples_per_video = 4;
  c.batch_size = 4;
  c.epochs = 1;
  c.optimizer.lr = 0.05;
  c.general = {1, 1e-2, 4, 1};
  c.finetune = {1, 1e-2, 4, 1};
  c.data.num_videos = 4;
  c.data.num_frames = 64;
  c.data.size = 8;
  c.data.num_subjects = 4;
  return c;
}

LoadedDataset tiny_data(const RunConfig& c) {
  auto ds = generate_synthetic_dataset(c.data, 1);
  return {std::move(ds.videos), std::move(ds.records)};
}

struct Fixture {
  RunConfig cfg = tiny_config();
  LoadedDataset data = tiny_data(cfg);
  Checkpoint base = run_pretrain_general(cfg, data).checkpoint;
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// The model the continual-pretraining stage starts from.
Model initial_pretext_model(const RunConfig& cfg, const Checkpoint& base) {
  Model m(cfg.backbone, mix_seed(cfg.seed, "model"));
  restore_checkpoint(m, base, nullptr, {true, true});
  m.add_head("speed", static_cast<int64_t>(cfg.vspp.speed_classes.size()), cfg.seed);
  m.add_head("index", cfg.vspp.num_segments, cfg.seed);
  return m;
}

}  // namespace

TEST_CASE("SGD with momentum follows the closed form on a quadratic") {
  Parameter p({2}, ParamKind::adapter);
  p.value[0] = 1.0f;
  p.value[1] = -2.0f;
  Parameter frozen({1}, ParamKind::backbone);
  frozen.trainable = false;
  frozen.value[0] = 5.0f;
  frozen.grad[0] = 1.0f;
  SgdMomentum opt(0.1, 0.9);
  float v0 = 0.0f, v1 = 0.0f, w0 = 1.0f, w1 = -2.0f;
  for (int step = 0; step < 3; ++step) {
    // L = 0.5 * |w|^2, so the gradient is w.
    p.grad = p.value;
    opt.step({{"p", &p}, {"frozen", &frozen}});
    v0 = 0.9f * v0 + w0;
    w0 -= 0.1f * v0;
    v1 = 0.9f * v1 + w1;
    w1 -= 0.1f * v1;
    CHECK(p.value[0] == w0);
    CHECK(p.value[1] == w1);
  }
  CHECK(frozen.value[0] == 5.0f);
}

TEST_CASE("metrics records serialize as ordered JSON lines") {
  CHECK(to_jsonl({"finetune", 2, 7, 0.5}) == R"({"stage":"finetune","epoch":2,"step":7,"loss":0.5})");
  const fs::path path = fs::temp_directory_path() / "pecop_test_metrics.jsonl";
  fs::remove(path);
  {
    JsonlMetricsSink sink(path);
    sink.record({"a", 0, 0, 1.0});
    sink.record({"a", 0, 1, 2.0});
  }
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("temporal crops") {
  Rng rng(1);
  const auto centre = temporal_crop(20, 8, false, rng);
  CHECK(centre.front() == 6);
  CHECK(centre.back() == 13);
  for (int i = 0; i < 50; ++i) {
    const auto r = temporal_crop(20, 8, true, rng);
    CHECK(r.front() >= 0);
    CHECK(r.back() <= 19);
    CHECK(r.back() - r.front() == 7);
  }
  CHECK_THROWS_AS(temporal_crop(7, 8, false, rng), DataError);
}

TEST_CASE("one epoch of continual pretraining lowers the pretext loss") {
  const Fixture& f = fixture();
  Model before = initial_pretext_model(f.cfg, f.base);
  const double initial = evaluate_pretext_loss(before, f.cfg, f.data, 99);
  const StageResult r = run_continual_pretrain(f.cfg, f.base, f.data);
  Model after = restore_model(f.cfg, r.checkpoint, &f.base);
  const double trained = evaluate_pretext_loss(after, f.cfg, f.data, 99);
  MESSAGE("pretext loss " << initial << " -> " << trained);
  CHECK(trained < initial);
  CHECK(r.epoch_losses.size() == 1);
  CHECK(r.step_losses.size() == 4);
}

TEST_CASE("continual pretraining under adapters_only stores only adapters and heads") {
  const Fixture& f = fixture();
  const StageResult r = run_continual_pretrain(f.cfg, f.base, f.data);
  CHECK(r.checkpoint.included == IncludedParams::trainable_only);
  for (const auto& b : r.checkpoint.blobs) CHECK((b.kind == BlobKind::adapter || b.kind == BlobKind::head));
  CHECK(r.checkpoint.has_kind(BlobKind::adapter));
}

TEST_CASE("frozen parameters are conserved bit-for-bit") {
  const Fixture& f = fixture();
  for (auto mode : {FreezeMode::adapters_only, FreezeMode::bn_affine_only}) {
    RunConfig cfg = f.cfg;
    cfg.freeze.mode = mode;
    const StageResult r = run_continual_pretrain(cfg, f.base, f.data);
    Model trained = restore_model(cfg, r.checkpoint, &f.base, {true, false});
    Model fresh(cfg.backbone, mix_seed(cfg.seed, "model"));
    for (auto& np : trained.parameters()) {
      const bool should_move = (mode == FreezeMode::adapters_only && np.param->kind == ParamKind::adapter) ||
                               (mode == FreezeMode::bn_affine_only && np.param->kind == ParamKind::bn_affine) ||
                               np.param->kind == ParamKind::head;
      if (should_move) continue;
      if (np.param->kind == ParamKind::adapter) {
        CHECK_MESSAGE(fresh.find_parameter(np.name)->value == np.param->value, np.name);
      } else {
        const Blob* b = f.base.find(np.name);
        REQUIRE_MESSAGE(b, np.name);
        CHECK_MESSAGE(b->value == np.param->value, np.name);
      }
    }
    // Running statistics stay at their base values.
    for (auto& nb : trained.buffers()) CHECK_MESSAGE(f.base.find(nb.name)->value == *nb.buffer, nb.name);
  }
}

TEST_CASE("nothing to optimize is a configuration error") {
  const Fixture& f = fixture();
  RunConfig cfg = f.cfg;
  cfg.freeze = {FreezeMode::none_trainable, false};
  CHECK_THROWS_AS(run_continual_pretrain(cfg, f.base, f.data), ConfigError);
  cfg.freeze.heads_trainable = true;
  CHECK_NOTHROW(run_continual_pretrain(cfg, f.base, f.data));
}

TEST_CASE("an empty dataset is a data error") {
  const Fixture& f = fixture();
  CHECK_THROWS_AS(run_continual_pretrain(f.cfg, f.base, LoadedDataset{}), DataError);
}

TEST_CASE("training is deterministic under the seed") {
  const Fixture& f = fixture();
  MemoryMetricsSink s1, s2;
  const StageResult a = run_continual_pretrain(f.cfg, f.base, f.data, &s1);
  const StageResult b = run_continual_pretrain(f.cfg, f.base, f.data, &s2);
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  for (size_t i = 0; i < a.step_losses.size(); ++i) CHECK(std::abs(a.step_losses[i] - b.step_losses[i]) <= 1e-6);
  CHECK(a.checkpoint == b.checkpoint);
  REQUIRE(s1.records.size() == s2.records.size());
  for (size_t i = 0; i < s1.records.size(); ++i) CHECK(to_jsonl(s1.records[i]) == to_jsonl(s2.records[i]));
}

TEST_CASE("usdl fine-tuning overfits a single repeated video") {
  const Fixture& f = fixture();
  RunConfig cfg = f.cfg;
  cfg.finetune = {50, 0.05, 1, 1};
  LoadedDataset one;
  one.videos.push_back(f.data.videos[0]);
  one.records.push_back(f.data.records[0]);
  const StageResult r = run_finetune(cfg, f.base, nullptr, one);
  REQUIRE(r.step_losses.size() == 50);
  MESSAGE("kl " << r.step_losses.front() << " -> " << r.step_losses.back());
  CHECK(r.step_losses.back() < 0.05);
}

TEST_CASE("identity adapters leave predictions unchanged before any step") {
  const Fixture& f = fixture();
  RunConfig cfg = f.cfg;
  Model plain = restore_model(cfg, f.base, nullptr, {false, true});
  cfg.backbone.adapter_init = AdapterInit::identity;
  Model adapted(cfg.backbone, mix_seed(cfg.seed, "model"));
  restore_checkpoint(adapted, f.base, nullptr, {true, true});
  CHECK(adapted.adapters().size() == 2);
  CHECK(plain.adapters().empty());
  plain.add_head("score", 5, 7);
  adapted.add_head("score", 5, 7);
  const auto a = predict_scores(plain, cfg, f.data);
  const auto b = predict_scores(adapted, cfg, f.data);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("pairwise head on a single video starts at zero loss") {
  const Fixture& f = fixture();
  RunConfig cfg = f.cfg;
  cfg.head = HeadKind::pairwise;
  cfg.finetune = {1, 1e-2, 1, 1};
  LoadedDataset one;
  one.videos.push_back(f.data.videos[1]);
  one.records.push_back(f.data.records[1]);
  const StageResult r = run_finetune(cfg, f.base, nullptr, one);
  REQUIRE_FALSE(r.step_losses.empty());
  CHECK(r.step_losses.front() == 0.0);
  Model m = restore_model(cfg, r.checkpoint);
  const auto pred = predict_scores(m, cfg, one, &one);
  CHECK(pred.front() == doctest::Approx(one.records[0].score));
}

TEST_CASE("labels outside the score support name the record") {
  const Fixture& f = fixture();
  RunConfig cfg = f.cfg;
  LoadedDataset bad = f.data;
  bad.records[2].score = 7;
  CHECK_THROWS_WITH_AS(run_finetune(cfg, f.base, nullptr, bad), doctest::Contains(bad.records[2].video_path.c_str()),
                       DataError);
}

TEST_CASE("fine-tuning unfreezes every layer unless restricted") {
  const Fixture& f = fixture();
  const StageResult cp = run_continual_pretrain(f.cfg, f.base, f.data);
  const StageResult ft = run_finetune(f.cfg, cp.checkpoint, &f.base, f.data);
  CHECK(ft.checkpoint.included == IncludedParams::all);
  Model m = restore_model(f.cfg, ft.checkpoint);
  CHECK(m.adapters().size() == 2);
  CHECK(m.has_head("score"));
  bool backbone_moved = false;
  for (auto& np : m.parameters()) {
    if (np.param->kind != ParamKind::backbone) continue;
    const Blob* b = f.base.find(np.name);
    backbone_moved = backbone_moved || !(b->value == np.param->value);
  }
  CHECK(backbone_moved);
  CHECK_THROWS_AS(run_finetune(f.cfg, cp.checkpoint, nullptr, f.data), CompatibilityError);
}
