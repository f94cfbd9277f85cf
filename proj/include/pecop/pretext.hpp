// SPDX-License-Identifier: Apache-2.0
#pragma once

// Video Segment Pace Prediction: a clip is cut into equal contiguous
// segments; one segment is resampled at a faster stride and the network
// predicts which segment (index head) and at what speed (speed head).

#include <cstdint>
#include <vector>

#include "pecop/layers.hpp"
#include "pecop/video.hpp"

namespace pecop {

struct VsppConfig {
  int64_t clip_len = 32;
  int64_t num_segments = 4;
  std::vector<int64_t> speed_classes{1, 2, 3, 4};

  void validate() const;
  int64_t segment_len() const { return clip_len / num_segments; }
  int64_t max_stride() const { return speed_classes.back(); }
  /// Shortest video every (segment, speed) choice fits into.
  int64_t min_video_length() const { return clip_len * max_stride(); }
};

/// Frame plan of one sample; the clip itself is gathered separately.
struct VsppPlan {
  int64_t segment_index = 0;
  int64_t speed_label = 0;  // index into speed_classes, never 0
  std::vector<int64_t> source_frame_ids;
};

struct PretextSample {
  Tensor clip;  // (3, clip_len, H, W)
  int64_t segment_index = 0;
  int64_t speed_label = 0;
  std::vector<int64_t> source_frame_ids;
};

/// Step into frame k (k >= 1) uses the stride of the segment containing k.
/// Throws DataError when the video is shorter than cfg.min_video_length().
VsppPlan plan_vspp(int64_t video_frames, const VsppConfig& cfg, int64_t segment_index, int64_t speed_label,
                   int64_t start);
VsppPlan plan_vspp(int64_t video_frames, const VsppConfig& cfg, uint64_t seed);

PretextSample make_vspp_sample(const Video& video, const VsppConfig& cfg, uint64_t seed,
                               const Augmentation& aug = Augmentation::none());

struct VideoPaceSample {
  Tensor clip;
  int64_t speed_label = 0;  // index into speed_classes, including the base stride
  std::vector<int64_t> source_frame_ids;
};

/// Whole clip at one stride; the start is drawn from [0, frames - clip_len*stride].
VideoPaceSample make_videopace_sample(const Video& video, const std::vector<int64_t>& speed_classes,
                                      int64_t clip_len, uint64_t seed,
                                      const Augmentation& aug = Augmentation::none());

struct PretextLogits {
  Tensor speed;  // (N, |speed_classes|)
  Tensor index;  // (N, num_segments)
};

/// Two independent linear heads on (N, F) features.
PretextLogits pretext_heads_forward(const Tensor& features, LinearLayer& speed_head, LinearLayer& index_head,
                                    bool train = false);

/// Cross-entropy on the speed label plus cross-entropy on the segment index.
double vspp_loss(std::span<const double> speed_logits, std::span<const double> index_logits,
                 int64_t speed_label, int64_t segment_index);

struct BatchLoss {
  double loss = 0.0;  // mean over the batch
  Tensor grad_speed;  // d loss / d logits
  Tensor grad_index;
};

BatchLoss vspp_loss_batch(const PretextLogits& logits, const std::vector<int64_t>& speed_labels,
                          const std::vector<int64_t>& segment_indices);

/// Mean cross-entropy over rows of (N, K) logits.
double cross_entropy_batch(const Tensor& logits, const std::vector<int64_t>& labels, Tensor* grad);

}  // namespace pecop
