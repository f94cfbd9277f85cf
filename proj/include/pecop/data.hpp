// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pecop/video.hpp"

namespace pecop {

/// One manifest line. Manifests are UTF-8 CSV with the header
///   video_path,task,score,subject_id,frame_count,split
struct ManifestRecord {
  std::string video_path;
  std::string task;
  int score = 0;
  std::string subject_id;
  int64_t frame_count = 1;
  std::string split;  // "train", "test", "fold<k>" or empty

  bool operator==(const ManifestRecord&) const = default;
};

inline constexpr const char* kManifestHeader = "video_path,task,score,subject_id,frame_count,split";

struct ManifestOptions {
  int min_score = 0;
  int max_score = 4;
};

std::vector<ManifestRecord> parse_manifest(const std::string& text, const ManifestOptions& options = {});
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
std::string format_manifest(const std::vector<ManifestRecord>& records);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

struct CellSummary {
  int64_t count = 0;
  int64_t min_frames = 0;
  int64_t max_frames = 0;
};

/// (task, score) -> count and frame-count range.
std::map<std::pair<std::string, int>, CellSummary> summarize_manifest(const std::vector<ManifestRecord>& records);

/// Record indices on each side of one split.
struct Fold {
  std::vector<size_t> train;
  std::vector<size_t> test;
};

struct SplitPolicy {
  enum class Kind { subject_holdout, kfold } kind = Kind::kfold;
  std::vector<std::string> train_subjects;  // subject_holdout
  std::vector<std::string> test_subjects;   // subject_holdout
  int k = 4;                                // kfold
  uint64_t seed = 0;                        // kfold subject shuffle

  static SplitPolicy holdout(std::vector<std::string> train, std::vector<std::string> test) {
    SplitPolicy p;
    p.kind = Kind::subject_holdout;
    p.train_subjects = std::move(train);
    p.test_subjects = std::move(test);
    return p;
  }
  static SplitPolicy kfold(int k, uint64_t seed) {
    SplitPolicy p;
    p.kind = Kind::kfold;
    p.k = k;
    p.seed = seed;
    return p;
  }
};

/// Subject-disjoint splits: one fold for a holdout, k folds otherwise.
std::vector<Fold> make_splits(const std::vector<ManifestRecord>& records, const SplitPolicy& policy);

/// Distinct subject ids in first-appearance order.
std::vector<std::string> unique_subjects(const std::vector<ManifestRecord>& records);

/// Seeded shuffle of the subjects, first n_train to the training side.
SplitPolicy random_subject_holdout(const std::vector<ManifestRecord>& records, size_t n_train, uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic action-quality videos. A bright blob moves with a speed set by
// `rate`; the quality score is the rate quantized into equal-width bands.

enum class Motif { oscillator, translation };
enum class Domain { general, target };
enum class Axis { horizontal, vertical };

const char* to_string(Motif motif) noexcept;
const char* to_string(Domain domain) noexcept;
Domain domain_from_string(const std::string& name);

struct SyntheticVideoSpec {
  int64_t num_frames = 64;
  int64_t size = 56;
  Motif motif = Motif::oscillator;
  Axis axis = Axis::horizontal;
  double rate = 0.05;  // cycles per frame for the oscillator
  double noise_level = 0.02;
  Domain domain = Domain::general;
  uint64_t seed = 0;
};

/// Equal-width bands over [min_rate, max_rate] mapped to scores 0..num_scores-1.
struct RateQuantizer {
  double min_rate = 0.01;
  double max_rate = 0.11;
  int num_scores = 5;

  void validate() const;
  int score(double rate) const;
  double band_width() const { return (max_rate - min_rate) / num_scores; }
  double band_midpoint(int score) const { return min_rate + (score + 0.5) * band_width(); }
};

Video render_synthetic_video(const SyntheticVideoSpec& spec);

struct SyntheticGrid {
  int64_t num_videos = 200;
  int64_t num_frames = 64;
  int64_t size = 56;
  RateQuantizer quantizer;
  double noise_level = 0.02;
  Domain domain = Domain::target;
  int64_t num_subjects = 40;
  double train_subject_fraction = 0.75;
  /// Task names include the motion axis (four action classes) when set.
  bool task_includes_axis = false;
  std::string name_prefix;  // prefix for video paths, defaults to the domain name

  void validate() const;
};

struct SyntheticDataset {
  std::vector<Video> videos;
  std::vector<ManifestRecord> records;
  std::vector<double> rates;
};

/// Rates are stratified over the quantizer range (one jittered draw per
/// equal-width stratum), so every score band receives the same share.
SyntheticDataset generate_synthetic_dataset(const SyntheticGrid& grid, uint64_t seed);

/// Writes `<dir>/<record.video_path>` for each video and `<dir>/manifest.csv`.
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset);

struct LoadedDataset {
  std::vector<Video> videos;
  std::vector<ManifestRecord> records;
};

LoadedDataset load_dataset(const std::filesystem::path& dir, const ManifestOptions& options = {});

/// Records (with their videos) whose split equals `split`.
LoadedDataset select_split(const LoadedDataset& dataset, const std::string& split);

}  // namespace pecop
