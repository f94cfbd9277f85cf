// SPDX-License-Identifier: Apache-2.0
#include "pecop/video.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "pecop/binary_io.hpp"

namespace pecop {

namespace binary {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace binary

AugmentationDraw draw_augmentation(const Video& video, const Augmentation& aug, Rng& rng) {
  AugmentationDraw d;
  const int64_t crop = aug.crop_size > 0 ? aug.crop_size : std::min(video.height, video.width);
  if (crop > video.height || crop > video.width) {
    throw DataError("crop size " + std::to_string(crop) + " exceeds frame extent");
  }
  d.size_h = aug.crop_size > 0 ? crop : video.height;
  d.size_w = aug.crop_size > 0 ? crop : video.width;
  if (aug.random_crop) {
    d.y0 = std::uniform_int_distribution<int64_t>(0, video.height - d.size_h)(rng);
    d.x0 = std::uniform_int_distribution<int64_t>(0, video.width - d.size_w)(rng);
  } else {
    d.y0 = (video.height - d.size_h) / 2;
    d.x0 = (video.width - d.size_w) / 2;
  }
  if (aug.horizontal_flip) d.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  if (aug.brightness > 0) d.brightness = std::uniform_real_distribution<float>(-aug.brightness, aug.brightness)(rng);
  if (aug.contrast > 0) d.contrast = std::uniform_real_distribution<float>(1 - aug.contrast, 1 + aug.contrast)(rng);
  return d;
}

Tensor extract_clip(const Video& video, const std::vector<int64_t>& frame_ids, const AugmentationDraw& draw) {
  const int64_t T = static_cast<int64_t>(frame_ids.size());
  const int64_t H = draw.size_h > 0 ? draw.size_h : video.height;
  const int64_t W = draw.size_w > 0 ? draw.size_w : video.width;
  if (T == 0) throw DataError("empty frame list");
  if (draw.y0 + H > video.height || draw.x0 + W > video.width) throw DataError("crop window outside frame");
  Tensor clip({3, T, H, W});
  for (int64_t t = 0; t < T; ++t) {
    const int64_t f = frame_ids[t];
    if (f < 0 || f >= video.frames) throw DataError("frame id " + std::to_string(f) + " out of range");
    for (int64_t c = 0; c < 3; ++c) {
      const int64_t src_c = video.channels == 1 ? 0 : c;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const int64_t sx = draw.flip ? draw.x0 + (W - 1 - x) : draw.x0 + x;
          float v = static_cast<float>(video.at(f, src_c, draw.y0 + y, sx)) / 255.0f;
          v = (v - 0.5f) * draw.contrast + 0.5f + draw.brightness;
          clip[((c * T + t) * H + y) * W + x] = 2.0f * v - 1.0f;
        }
    }
  }
  return clip;
}

namespace {
constexpr char kVideoMagic[4] = {'P', 'V', 'I', 'D'};
constexpr uint32_t kVideoVersion = 1;
}  // namespace

void write_video(const std::filesystem::path& path, const Video& video) {
  std::string out(kVideoMagic, 4);
  binary::put_u32(out, kVideoVersion);
  binary::put_u32(out, static_cast<uint32_t>(video.frames));
  binary::put_u32(out, static_cast<uint32_t>(video.channels));
  binary::put_u32(out, static_cast<uint32_t>(video.height));
  binary::put_u32(out, static_cast<uint32_t>(video.width));
  out.append(reinterpret_cast<const char*>(video.pixels.data()), video.pixels.size());
  binary::write_file_atomic(path, out);
}

Video read_video(const std::filesystem::path& path) {
  const std::string bytes = binary::read_file(path);
  binary::Reader r(bytes);
  if (r.take(4) != std::string_view(kVideoMagic, 4)) throw DataError(path.string() + ": not a video container");
  const uint32_t version = r.u32();
  if (version != kVideoVersion) throw DataError(path.string() + ": unsupported video version " + std::to_string(version));
  Video v;
  v.frames = r.u32();
  v.channels = r.u32();
  v.height = r.u32();
  v.width = r.u32();
  if (v.frames <= 0 || v.height <= 0 || v.width <= 0 || (v.channels != 1 && v.channels != 3)) {
    throw DataError(path.string() + ": invalid video extents");
  }
  const auto n = static_cast<size_t>(v.frames * v.channels * v.height * v.width);
  auto payload = r.take(n);
  if (r.remaining() != 0) throw DataError(path.string() + ": trailing bytes after frames");
  v.pixels.assign(payload.begin(), payload.end());
  return v;
}

namespace {

struct Image {
  int64_t channels, height, width;
  std::string pixels;
};

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

Image read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": only binary PGM/PPM frames are supported");
  Image img;
  img.channels = magic == "P5" ? 1 : 3;
  try {
    img.width = std::stoll(next_token(in));
    img.height = std::stoll(next_token(in));
    if (std::stoll(next_token(in)) != 255) throw DataError(path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed header");
  }
  in.get();
  img.pixels.resize(static_cast<size_t>(img.channels * img.height * img.width));
  in.read(img.pixels.data(), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw DataError(path.string() + ": truncated pixel data");
  return img;
}

}  // namespace

Video read_image_sequence(const std::filesystem::path& directory) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  if (files.empty()) throw DataError(directory.string() + ": no PGM/PPM frames found");
  std::sort(files.begin(), files.end());
  Video video;
  for (size_t t = 0; t < files.size(); ++t) {
    Image img = read_netpbm(files[t]);
    if (t == 0) {
      video = Video(static_cast<int64_t>(files.size()), img.channels, img.height, img.width);
    } else if (img.channels != video.channels || img.height != video.height || img.width != video.width) {
      throw DataError(files[t].string() + ": frame extents differ from the first frame");
    }
    // netpbm is interleaved (H, W, C); the container is planar per frame.
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x)
        for (int64_t c = 0; c < img.channels; ++c)
          video.at(static_cast<int64_t>(t), c, y, x) =
              static_cast<uint8_t>(img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + c)]);
  }
  return video;
}

}  // namespace pecop
