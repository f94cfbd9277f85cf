// SPDX-License-Identifier: Apache-2.0
#include "pecop/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "pecop/binary_io.hpp"

namespace pecop {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

template <typename Int>
bool parse_int(const std::string& s, Int& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void fail_line(size_t line, const std::string& what) {
  throw DataError("manifest line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& text, const ManifestOptions& options) {
  std::vector<ManifestRecord> records;
  std::set<std::string> paths;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) fail_line(line_no, std::string("expected header '") + kManifestHeader + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 6) fail_line(line_no, "expected 6 fields, found " + std::to_string(f.size()));
    ManifestRecord r;
    r.video_path = f[0];
    r.task = f[1];
    r.subject_id = f[3];
    r.split = f[5];
    if (r.video_path.empty()) fail_line(line_no, "empty video_path");
    if (r.task.empty()) fail_line(line_no, "empty task");
    if (r.subject_id.empty()) fail_line(line_no, "empty subject_id");
    if (!parse_int(f[2], r.score)) fail_line(line_no, "score '" + f[2] + "' is not an integer");
    if (!parse_int(f[4], r.frame_count)) fail_line(line_no, "frame_count '" + f[4] + "' is not an integer");
    if (r.frame_count < 1) fail_line(line_no, "frame_count must be at least 1");
    if (r.score < options.min_score || r.score > options.max_score) {
      fail_line(line_no, "score " + std::to_string(r.score) + " outside [" + std::to_string(options.min_score) + ", " +
                             std::to_string(options.max_score) + "]");
    }
    if (!paths.insert(r.video_path).second) fail_line(line_no, "duplicate video_path " + r.video_path);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
  return parse_manifest(binary::read_file(path), options);
}

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& r : records) {
    os << r.video_path << ',' << r.task << ',' << r.score << ',' << r.subject_id << ',' << r.frame_count << ','
       << r.split << '\n';
  }
  return os.str();
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  binary::write_file_atomic(path, format_manifest(records));
}

std::map<std::pair<std::string, int>, CellSummary> summarize_manifest(const std::vector<ManifestRecord>& records) {
  std::map<std::pair<std::string, int>, CellSummary> cells;
  for (const auto& r : records) {
    auto& c = cells[{r.task, r.score}];
    if (c.count == 0) {
      c.min_frames = c.max_frames = r.frame_count;
    } else {
      c.min_frames = std::min(c.min_frames, r.frame_count);
      c.max_frames = std::max(c.max_frames, r.frame_count);
    }
    ++c.count;
  }
  return cells;
}

std::vector<std::string> unique_subjects(const std::vector<ManifestRecord>& records) {
  std::vector<std::string> subjects;
  std::set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.subject_id).second) subjects.push_back(r.subject_id);
  return subjects;
}

SplitPolicy random_subject_holdout(const std::vector<ManifestRecord>& records, size_t n_train, uint64_t seed) {
  auto subjects = unique_subjects(records);
  if (n_train > subjects.size()) throw ConfigError("holdout: more training subjects requested than available");
  Rng rng(mix_seed(seed, "holdout"));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::vector<std::string> train(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> test(subjects.begin() + static_cast<std::ptrdiff_t>(n_train), subjects.end());
  return SplitPolicy::holdout(std::move(train), std::move(test));
}

std::vector<Fold> make_splits(const std::vector<ManifestRecord>& records, const SplitPolicy& policy) {
  if (policy.kind == SplitPolicy::Kind::subject_holdout) {
    const std::set<std::string> train(policy.train_subjects.begin(), policy.train_subjects.end());
    const std::set<std::string> test(policy.test_subjects.begin(), policy.test_subjects.end());
    for (const auto& s : train)
      if (test.count(s)) throw ConfigError("holdout: subject " + s + " listed on both sides");
    Fold fold;
    for (size_t i = 0; i < records.size(); ++i) {
      const auto& s = records[i].subject_id;
      if (train.count(s)) {
        fold.train.push_back(i);
      } else if (test.count(s)) {
        fold.test.push_back(i);
      } else {
        throw ConfigError("holdout: subject " + s + " is assigned to neither side");
      }
    }
    return {fold};
  }

  auto subjects = unique_subjects(records);
  if (policy.k < 2) throw ConfigError("kfold: k must be at least 2");
  if (static_cast<size_t>(policy.k) > subjects.size()) {
    throw ConfigError("kfold: k=" + std::to_string(policy.k) + " exceeds the " + std::to_string(subjects.size()) +
                      " available subjects");
  }
  Rng rng(mix_seed(policy.seed, "kfold"));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::map<std::string, int> fold_of;
  for (size_t i = 0; i < subjects.size(); ++i) fold_of[subjects[i]] = static_cast<int>(i % policy.k);
  std::vector<Fold> folds(static_cast<size_t>(policy.k));
  for (size_t i = 0; i < records.size(); ++i) {
    const int f = fold_of.at(records[i].subject_id);
    for (int j = 0; j < policy.k; ++j) (j == f ? folds[j].test : folds[j].train).push_back(i);
  }
  return folds;
}

const char* to_string(Motif motif) noexcept { return motif == Motif::oscillator ? "oscillator" : "translation"; }

const char* to_string(Domain domain) noexcept { return domain == Domain::general ? "general" : "target"; }

Domain domain_from_string(const std::string& name) {
  if (name == "general") return Domain::general;
  if (name == "target") return Domain::target;
  throw ConfigError("unknown domain: " + name);
}

void RateQuantizer::validate() const {
  if (!(min_rate < max_rate)) throw ConfigError("rate quantizer: min_rate must be below max_rate");
  if (num_scores < 2) throw ConfigError("rate quantizer: at least two scores are required");
}

int RateQuantizer::score(double rate) const {
  const double t = (rate - min_rate) / band_width();
  return std::clamp(static_cast<int>(std::floor(t)), 0, num_scores - 1);
}

namespace {

struct DomainStyle {
  double background;
  double texture;  // amplitude of a static grating
  double blob;     // peak blob intensity above background
};

DomainStyle style_for(Domain domain) {
  if (domain == Domain::general) return {0.15, 0.0, 0.75};
  return {0.30, 0.10, 0.50};
}

}  // namespace

Video render_synthetic_video(const SyntheticVideoSpec& spec) {
  if (spec.num_frames < 1 || spec.size < 4) throw ConfigError("synthetic video: extents too small");
  if (!(spec.rate > 0.0)) throw ConfigError("synthetic video: rate must be positive");
  Rng rng(mix_seed(spec.seed, "render"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_level);

  const auto S = static_cast<double>(spec.size);
  const double sigma = S / 10.0;
  const double amplitude = S / 4.0;
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double cross = S * (0.35 + 0.3 * unit(rng));  // fixed coordinate across the motion axis
  const double start = S * unit(rng);
  const double direction = unit(rng) < 0.5 ? -1.0 : 1.0;
  const DomainStyle style = style_for(spec.domain);
  const double grating_freq = 2.0 * std::numbers::pi * (2.0 + 2.0 * unit(rng)) / S;
  const double grating_angle = std::numbers::pi * unit(rng);

  Video video(spec.num_frames, 3, spec.size, spec.size);
  std::vector<double> background(static_cast<size_t>(spec.size * spec.size));
  for (int64_t y = 0; y < spec.size; ++y)
    for (int64_t x = 0; x < spec.size; ++x) {
      const double u = std::cos(grating_angle) * x + std::sin(grating_angle) * y;
      background[y * spec.size + x] = style.background + style.texture * std::sin(grating_freq * u);
    }

  for (int64_t t = 0; t < spec.num_frames; ++t) {
    const auto tf = static_cast<double>(t);
    double along = 0.0;
    if (spec.motif == Motif::oscillator) {
      along = S / 2.0 + amplitude * std::sin(2.0 * std::numbers::pi * spec.rate * tf + phase);
    } else {
      // Same mean speed as the oscillator (4 * amplitude * rate per frame), wrapping around.
      along = std::fmod(start + direction * 4.0 * amplitude * spec.rate * tf + 4.0 * S * spec.num_frames, S);
    }
    for (int64_t y = 0; y < spec.size; ++y)
      for (int64_t x = 0; x < spec.size; ++x) {
        const double pa = spec.axis == Axis::horizontal ? x : y;
        const double pc = spec.axis == Axis::horizontal ? y : x;
        double da = std::abs(pa - along);
        if (spec.motif == Motif::translation) da = std::min(da, S - da);
        const double dc = pc - cross;
        const double blob = std::exp(-(da * da + dc * dc) / (2.0 * sigma * sigma));
        const double v = background[y * spec.size + x] + style.blob * blob + noise(rng);
        const auto px = static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
        for (int64_t c = 0; c < 3; ++c) video.at(t, c, y, x) = px;
      }
  }
  return video;
}

void SyntheticGrid::validate() const {
  quantizer.validate();
  if (num_videos < 1) throw ConfigError("synthetic grid: num_videos must be positive");
  if (num_subjects < 1 || num_subjects > num_videos) throw ConfigError("synthetic grid: invalid num_subjects");
  if (!(train_subject_fraction > 0.0 && train_subject_fraction < 1.0)) {
    throw ConfigError("synthetic grid: train_subject_fraction must lie in (0, 1)");
  }
}

SyntheticDataset generate_synthetic_dataset(const SyntheticGrid& grid, uint64_t seed) {
  grid.validate();
  Rng rng(mix_seed(seed, "grid"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::string prefix = grid.name_prefix.empty() ? to_string(grid.domain) : grid.name_prefix;

  // Subject holdout decided up front so the manifest carries the split.
  std::vector<int64_t> subject_order(static_cast<size_t>(grid.num_subjects));
  std::iota(subject_order.begin(), subject_order.end(), 0);
  std::shuffle(subject_order.begin(), subject_order.end(), rng);
  const auto n_train = static_cast<int64_t>(std::lround(grid.train_subject_fraction * grid.num_subjects));
  std::vector<bool> is_train(static_cast<size_t>(grid.num_subjects), false);
  for (int64_t i = 0; i < n_train; ++i) is_train[subject_order[i]] = true;

  SyntheticDataset ds;
  const double span = grid.quantizer.max_rate - grid.quantizer.min_rate;
  for (int64_t i = 0; i < grid.num_videos; ++i) {
    SyntheticVideoSpec spec;
    spec.num_frames = grid.num_frames;
    spec.size = grid.size;
    spec.motif = (i % 2 == 0) ? Motif::oscillator : Motif::translation;
    spec.axis = unit(rng) < 0.5 ? Axis::horizontal : Axis::vertical;
    spec.rate = grid.quantizer.min_rate + span * (static_cast<double>(i) + unit(rng)) / grid.num_videos;
    spec.noise_level = grid.noise_level;
    spec.domain = grid.domain;
    spec.seed = mix_seed(seed, static_cast<uint64_t>(i));

    const int64_t subject = i % grid.num_subjects;
    ManifestRecord r;
    char name[64];
    std::snprintf(name, sizeof(name), "videos/%s_%04lld.pvid", prefix.c_str(), static_cast<long long>(i));
    r.video_path = name;
    r.task = to_string(spec.motif);
    if (grid.task_includes_axis) r.task += spec.axis == Axis::horizontal ? "_h" : "_v";
    r.score = grid.quantizer.score(spec.rate);
    r.subject_id = prefix + "_s" + std::to_string(subject);
    r.frame_count = spec.num_frames;
    r.split = is_train[subject] ? "train" : "test";

    ds.videos.push_back(render_synthetic_video(spec));
    ds.records.push_back(std::move(r));
    ds.rates.push_back(spec.rate);
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset) {
  for (size_t i = 0; i < dataset.videos.size(); ++i) write_video(dir / dataset.records[i].video_path, dataset.videos[i]);
  save_manifest(dir / "manifest.csv", dataset.records);
}

LoadedDataset load_dataset(const std::filesystem::path& dir, const ManifestOptions& options) {
  LoadedDataset ds;
  ds.records = load_manifest(dir / "manifest.csv", options);
  for (const auto& r : ds.records) {
    Video v = read_video(dir / r.video_path);
    if (v.frames != r.frame_count) {
      throw DataError(r.video_path + ": manifest says " + std::to_string(r.frame_count) + " frames, file has " +
                      std::to_string(v.frames));
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

LoadedDataset select_split(const LoadedDataset& dataset, const std::string& split) {
  LoadedDataset out;
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].split == split) {
      out.records.push_back(dataset.records[i]);
      out.videos.push_back(dataset.videos[i]);
    }
  }
  return out;
}

}  // namespace pecop
