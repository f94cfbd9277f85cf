// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pecop/random.hpp"
#include "pecop/tensor.hpp"

namespace pecop {

/// Raw 8-bit frames, layout (T, C, H, W).
struct Video {
  int64_t frames = 0;
  int64_t channels = 3;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;

  Video() = default;
  Video(int64_t t, int64_t c, int64_t h, int64_t w)
      : frames(t), channels(c), height(h), width(w), pixels(static_cast<size_t>(t * c * h * w), 0) {}

  uint8_t& at(int64_t t, int64_t c, int64_t y, int64_t x) { return pixels[index(t, c, y, x)]; }
  uint8_t at(int64_t t, int64_t c, int64_t y, int64_t x) const { return pixels[index(t, c, y, x)]; }
  size_t index(int64_t t, int64_t c, int64_t y, int64_t x) const {
    return static_cast<size_t>(((t * channels + c) * height + y) * width + x);
  }
  bool operator==(const Video&) const = default;
};

/// Spatial augmentation applied identically to every frame of a clip.
struct Augmentation {
  int64_t crop_size = 0;  // 0 keeps the full frame; otherwise a square crop
  bool random_crop = true;  // false centers the crop
  bool horizontal_flip = true;
  float brightness = 0.1f;  // additive, uniform in [-b, b] (unit = full range)
  float contrast = 0.1f;    // multiplicative, uniform in [1-c, 1+c]

  static Augmentation none() { return {0, false, false, 0.0f, 0.0f}; }
  static Augmentation center(int64_t crop) { return {crop, false, false, 0.0f, 0.0f}; }
};

/// Concrete draw of an Augmentation.
struct AugmentationDraw {
  int64_t y0 = 0, x0 = 0, size_h = 0, size_w = 0;
  bool flip = false;
  float brightness = 0.0f;
  float contrast = 1.0f;
};

AugmentationDraw draw_augmentation(const Video& video, const Augmentation& aug, Rng& rng);

/// Gathers the listed frames into a (3, T, H', W') float clip in [-1, 1].
/// Single-channel videos are replicated to three channels.
Tensor extract_clip(const Video& video, const std::vector<int64_t>& frame_ids, const AugmentationDraw& draw);

/// Simple container: magic "PVID", u32 version, u32 T, C, H, W, then raw bytes.
void write_video(const std::filesystem::path& path, const Video& video);
Video read_video(const std::filesystem::path& path);

/// Reads a directory of binary PGM (P5) or PPM (P6) frames, sorted by file name.
Video read_image_sequence(const std::filesystem::path& directory);

}  // namespace pecop
