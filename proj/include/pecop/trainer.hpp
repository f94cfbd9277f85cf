// SPDX-License-Identifier: Apache-2.0
#pragma once

// Three-stage workflow: general pretraining of the plain backbone, continual
// pretraining on unlabeled target videos with a pretext task, supervised
// fine-tuning with a quality-assessment head.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pecop/checkpoint.hpp"
#include "pecop/config.hpp"
#include "pecop/data.hpp"

namespace pecop {

struct MetricsRecord {
  std::string stage;
  int64_t epoch = 0;
  int64_t step = 0;
  double loss = 0.0;
};

/// One JSON object per line: {"stage":..,"epoch":..,"step":..,"loss":..}
std::string to_jsonl(const MetricsRecord& record);

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void record(const MetricsRecord& record) = 0;
};

class MemoryMetricsSink : public MetricsSink {
 public:
  void record(const MetricsRecord& r) override { records.push_back(r); }
  std::vector<MetricsRecord> records;
};

/// Appends JSONL records to a file.
class JsonlMetricsSink : public MetricsSink {
 public:
  explicit JsonlMetricsSink(const std::filesystem::path& path);
  void record(const MetricsRecord& r) override;

 private:
  std::ofstream out_;
};

/// v <- momentum * v + g;  p <- p - lr * v. Frozen parameters are skipped.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(static_cast<float>(lr)), momentum_(static_cast<float>(momentum)) {}

  void step(const std::vector<NamedParameter>& params);

 private:
  float lr_;
  float momentum_;
  std::unordered_map<const Parameter*, Tensor> velocity_;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean step loss per epoch
};

/// Supervised action classification over the dataset's task names on the
/// adapter-free backbone; every parameter trains. Returns an all-parameter checkpoint.
StageResult run_pretrain_general(const RunConfig& cfg, const LoadedDataset& data, MetricsSink* sink = nullptr);

/// Inserts adapters (when configured), restores `base`, applies cfg.freeze and
/// trains the pretext heads plus the trainable parameters. Returns a
/// trainable_only checkpoint.
StageResult run_continual_pretrain(const RunConfig& cfg, const Checkpoint& base, const LoadedDataset& data,
                                   MetricsSink* sink = nullptr);

/// Restores `checkpoint` (over `base` when it is trainable_only), attaches the
/// configured score head and trains with every layer unfrozen. Returns an
/// all-parameter checkpoint.
StageResult run_finetune(const RunConfig& cfg, const Checkpoint& checkpoint, const Checkpoint* base,
                         const LoadedDataset& train, MetricsSink* sink = nullptr);

/// Model whose architecture (adapters or not, heads) follows the checkpoints.
Model restore_model(const RunConfig& cfg, const Checkpoint& checkpoint, const Checkpoint* base = nullptr,
                    const RestoreOptions& options = {});

/// Mean pretext loss over a fixed set of samples (eval-mode forward).
double evaluate_pretext_loss(Model& model, const RunConfig& cfg, const LoadedDataset& data, uint64_t seed);

/// Frame ids of a contiguous clip; the start is uniform when `random`, centred otherwise.
std::vector<int64_t> temporal_crop(int64_t video_frames, int64_t clip_len, bool random, Rng& rng);

/// Scalar score per video from a fine-tuned model. The pairwise head draws
/// its exemplars from `exemplars`.
std::vector<double> predict_scores(Model& model, const RunConfig& cfg, const LoadedDataset& data,
                                   const LoadedDataset* exemplars = nullptr);

}  // namespace pecop
