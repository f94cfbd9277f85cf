// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pecop/backbone.hpp"
#include "pecop/config.hpp"
#include "pecop/data.hpp"

namespace pecop {

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Pearson correlation; MetricError when either side is constant or lengths differ.
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of fractional ranks, in [-1, 1].
double spearman(std::span<const double> pred, std::span<const double> truth);

struct EvalResult {
  std::map<std::string, double> per_task;  // percentage
  std::map<std::string, int64_t> n_videos;
  double average = 0.0;                    // unweighted mean over per_task, percentage
  std::vector<std::string> warnings;

  bool operator==(const EvalResult&) const = default;
};

/// Groups records by task. Tasks with fewer than two videos, or an undefined
/// correlation, are skipped with a warning.
EvalResult evaluate_predictions(const std::vector<ManifestRecord>& records, const std::vector<double>& predictions);

/// Decodes each video with the model's score head and scores it per task.
EvalResult evaluate_model(Model& model, const RunConfig& cfg, const LoadedDataset& eval,
                          const LoadedDataset* exemplars = nullptr);

std::string to_json(const EvalResult& result);
EvalResult eval_result_from_json(const std::string& text);

struct RunSummary {
  std::string label;
  TrainabilityReport trainability;
  int64_t epochs = 0;
  int64_t checkpoint_bytes = 0;
  EvalResult eval;
};

struct ComparisonReport {
  std::string table;                 // aligned plain text
  std::vector<std::string> records;  // one JSON object per run
};

/// Columns: label, trainable params, epochs, checkpoint size, one per task, average.
ComparisonReport comparison_report(const std::vector<RunSummary>& runs);

}  // namespace pecop
