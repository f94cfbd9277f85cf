// SPDX-License-Identifier: Apache-2.0
#include "pecop/pretext.hpp"

#include <algorithm>

#include "pecop/losses.hpp"

namespace pecop {

void VsppConfig::validate() const {
  if (clip_len <= 0 || num_segments <= 0) throw ConfigError("vspp: clip_len and num_segments must be positive");
  if (clip_len % num_segments != 0) {
    throw ConfigError("vspp: clip_len " + std::to_string(clip_len) + " not divisible by num_segments " +
                      std::to_string(num_segments));
  }
  if (segment_len() < 2) throw ConfigError("vspp: segments must span at least two frames");
  if (speed_classes.size() < 2) throw ConfigError("vspp: need the base stride plus at least one faster stride");
  if (speed_classes.front() != 1) throw ConfigError("vspp: speed_classes must start at stride 1");
  for (size_t i = 1; i < speed_classes.size(); ++i) {
    if (speed_classes[i] <= speed_classes[i - 1]) throw ConfigError("vspp: speed_classes must be strictly increasing");
  }
}

namespace {

void require_length(int64_t frames, int64_t required) {
  if (frames < required) {
    throw DataError("video has " + std::to_string(frames) + " frames; at least " + std::to_string(required) +
                    " required");
  }
}

std::vector<int64_t> segment_ids(const VsppConfig& cfg, int64_t segment_index, int64_t speed_label, int64_t start) {
  const int64_t m = cfg.segment_len();
  std::vector<int64_t> ids(static_cast<size_t>(cfg.clip_len));
  ids[0] = start;
  for (int64_t k = 1; k < cfg.clip_len; ++k) {
    const int64_t stride = (k / m == segment_index) ? cfg.speed_classes[speed_label] : cfg.speed_classes[0];
    ids[k] = ids[k - 1] + stride;
  }
  return ids;
}

}  // namespace

VsppPlan plan_vspp(int64_t video_frames, const VsppConfig& cfg, int64_t segment_index, int64_t speed_label,
                   int64_t start) {
  cfg.validate();
  require_length(video_frames, cfg.min_video_length());
  if (segment_index < 0 || segment_index >= cfg.num_segments) throw DataError("vspp: segment index out of range");
  if (speed_label < 1 || speed_label >= static_cast<int64_t>(cfg.speed_classes.size())) {
    throw DataError("vspp: speed label must select a non-base stride");
  }
  VsppPlan plan{segment_index, speed_label, segment_ids(cfg, segment_index, speed_label, start)};
  if (start < 0 || plan.source_frame_ids.back() >= video_frames) throw DataError("vspp: clip exceeds the video");
  return plan;
}

VsppPlan plan_vspp(int64_t video_frames, const VsppConfig& cfg, uint64_t seed) {
  cfg.validate();
  require_length(video_frames, cfg.min_video_length());
  Rng rng(mix_seed(seed, "vspp"));
  const int64_t index = std::uniform_int_distribution<int64_t>(0, cfg.num_segments - 1)(rng);
  const auto classes = static_cast<int64_t>(cfg.speed_classes.size());
  const int64_t label = std::uniform_int_distribution<int64_t>(1, classes - 1)(rng);
  const int64_t span = segment_ids(cfg, index, label, 0).back();
  const int64_t start = std::uniform_int_distribution<int64_t>(0, video_frames - 1 - span)(rng);
  return plan_vspp(video_frames, cfg, index, label, start);
}

PretextSample make_vspp_sample(const Video& video, const VsppConfig& cfg, uint64_t seed, const Augmentation& aug) {
  VsppPlan plan = plan_vspp(video.frames, cfg, seed);
  Rng rng(mix_seed(seed, "augment"));
  const AugmentationDraw draw = draw_augmentation(video, aug, rng);
  PretextSample s;
  s.clip = extract_clip(video, plan.source_frame_ids, draw);
  s.segment_index = plan.segment_index;
  s.speed_label = plan.speed_label;
  s.source_frame_ids = std::move(plan.source_frame_ids);
  return s;
}

VideoPaceSample make_videopace_sample(const Video& video, const std::vector<int64_t>& speed_classes, int64_t clip_len,
                                      uint64_t seed, const Augmentation& aug) {
  if (speed_classes.empty() || clip_len <= 0) throw ConfigError("videopace: empty speed classes or clip");
  const int64_t max_stride = *std::max_element(speed_classes.begin(), speed_classes.end());
  require_length(video.frames, clip_len * max_stride);
  Rng rng(mix_seed(seed, "videopace"));
  VideoPaceSample s;
  s.speed_label =
      std::uniform_int_distribution<int64_t>(0, static_cast<int64_t>(speed_classes.size()) - 1)(rng);
  const int64_t stride = speed_classes[s.speed_label];
  const int64_t start = std::uniform_int_distribution<int64_t>(0, video.frames - clip_len * stride)(rng);
  s.source_frame_ids.resize(static_cast<size_t>(clip_len));
  for (int64_t k = 0; k < clip_len; ++k) s.source_frame_ids[k] = start + k * stride;
  Rng aug_rng(mix_seed(seed, "augment"));
  s.clip = extract_clip(video, s.source_frame_ids, draw_augmentation(video, aug, aug_rng));
  return s;
}

PretextLogits pretext_heads_forward(const Tensor& features, LinearLayer& speed_head, LinearLayer& index_head,
                                    bool train) {
  if (features.rank() != 2 || features.dim(1) != speed_head.in_features() ||
      features.dim(1) != index_head.in_features()) {
    throw ShapeError("pretext heads expect (N, " + std::to_string(speed_head.in_features()) + ") features, got " +
                     shape_string(features.shape()));
  }
  return {speed_head.forward(features, train), index_head.forward(features, train)};
}

double vspp_loss(std::span<const double> speed_logits, std::span<const double> index_logits, int64_t speed_label,
                 int64_t segment_index) {
  return cross_entropy(speed_logits, speed_label) + cross_entropy(index_logits, segment_index);
}

double cross_entropy_batch(const Tensor& logits, const std::vector<int64_t>& labels, Tensor* grad) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int64_t>(labels.size())) {
    throw ShapeError("cross_entropy_batch: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (grad) *grad = Tensor(logits.shape());
  double total = 0.0;
  std::vector<double> row(static_cast<size_t>(K)), g;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t k = 0; k < K; ++k) row[k] = logits[n * K + k];
    total += cross_entropy<double>(row, labels[n], grad ? &g : nullptr);
    if (grad)
      for (int64_t k = 0; k < K; ++k) (*grad)[n * K + k] = static_cast<float>(g[k] / static_cast<double>(N));
  }
  return total / static_cast<double>(N);
}

BatchLoss vspp_loss_batch(const PretextLogits& logits, const std::vector<int64_t>& speed_labels,
                          const std::vector<int64_t>& segment_indices) {
  BatchLoss out;
  out.loss = cross_entropy_batch(logits.speed, speed_labels, &out.grad_speed) +
             cross_entropy_batch(logits.index, segment_indices, &out.grad_index);
  return out;
}

}  // namespace pecop
