// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <boost/math/distributions/chi_squared.hpp>

#include "oracles.hpp"
#include "pecop/backbone.hpp"
#include "pecop/pretext.hpp"
#include "pecop/trainer.hpp"

using namespace pecop;

namespace {

// Pixel value encodes the frame index so gathered clips reveal provenance.
Video ramp_video(int64_t frames, int64_t size = 4) {
  Video v(frames, 1, size, size);
  for (int64_t t = 0; t < frames; ++t)
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) v.at(t, 0, y, x) = static_cast<uint8_t>(t % 256);
  return v;
}

double chi_square_p(const std::vector<int64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (auto c : counts) stat += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("config invariants") {
  VsppConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip_len = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.speed_classes = {2, 3};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.speed_classes = {1, 3, 3};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("chosen segment advances at its stride, others at the base stride") {
  const VsppConfig cfg;
  const VsppPlan p = plan_vspp(128, cfg, 2, 3, 0);
  REQUIRE(p.source_frame_ids.size() == 32);
  for (int64_t k = 1; k < 32; ++k) {
    const int64_t step = p.source_frame_ids[k] - p.source_frame_ids[k - 1];
    CHECK(step == ((k >= 16 && k <= 23) ? 4 : 1));
  }
  CHECK(cfg.speed_classes[p.speed_label] == 4);
}

TEST_CASE("too-short video names the minimum length") {
  const VsppConfig cfg;
  const Video v = ramp_video(cfg.clip_len * cfg.max_stride() - 1);
  CHECK_THROWS_WITH_AS(make_vspp_sample(v, cfg, 1), doctest::Contains("128"), DataError);
  CHECK_NOTHROW(make_vspp_sample(ramp_video(128), cfg, 1));
}

TEST_CASE("label distribution is uniform over segment and speed") {
  const VsppConfig cfg;
  std::vector<int64_t> counts(4 * 3, 0);
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const VsppPlan p = plan_vspp(128, cfg, seed);
    REQUIRE(p.speed_label >= 1);
    ++counts[static_cast<size_t>(p.segment_index * 3 + (p.speed_label - 1))];
  }
  CHECK(chi_square_p(counts) > 0.01);
}

TEST_CASE("labels are recoverable from provenance and clips keep their length") {
  const Video v = ramp_video(160);
  for (const VsppConfig& cfg : {VsppConfig{}, VsppConfig{24, 3, {1, 2, 3, 4}}, VsppConfig{16, 4, {1, 3}}}) {
    for (uint64_t seed = 0; seed < 200; ++seed) {
      const PretextSample s = make_vspp_sample(v, cfg, seed);
      CHECK(s.clip.shape() == Shape{3, cfg.clip_len, 4, 4});
      CHECK(std::is_sorted(s.source_frame_ids.begin(), s.source_frame_ids.end()));
      const auto r = oracle::recover_vspp_labels(s.source_frame_ids, cfg.segment_len(), cfg.speed_classes);
      CHECK(r.consistent);
      CHECK(r.segment_index == s.segment_index);
      CHECK(r.speed_label == s.speed_label);
      // Frame content follows the provenance list.
      for (int64_t k = 0; k < cfg.clip_len; ++k) {
        const float want = static_cast<float>(s.source_frame_ids[k]) / 127.5f - 1.0f;
        CHECK(s.clip[static_cast<size_t>(k * 16)] == doctest::Approx(want).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("samples are deterministic under the seed") {
  const Video v = ramp_video(128, 8);
  Augmentation aug;
  aug.crop_size = 6;
  const PretextSample a = make_vspp_sample(v, VsppConfig{}, 42, aug);
  const PretextSample b = make_vspp_sample(v, VsppConfig{}, 42, aug);
  CHECK(a.clip == b.clip);
  CHECK(a.source_frame_ids == b.source_frame_ids);
  const PretextSample c = make_vspp_sample(v, VsppConfig{}, 43, aug);
  CHECK_FALSE((a.clip == c.clip && a.source_frame_ids == c.source_frame_ids));
}

TEST_CASE("loss closed forms") {
  const std::vector<double> zeros(4, 0.0);
  CHECK(vspp_loss(zeros, zeros, 1, 2) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
  CHECK(2.0 * std::log(4.0) == doctest::Approx(2.7726).epsilon(1e-4));
  // log of a one-hot distribution in the limit.
  std::vector<double> speed{-1e9, -1e9, 0.0, -1e9}, index{0.0, -1e9, -1e9, -1e9};
  CHECK(vspp_loss(speed, index, 2, 0) == doctest::Approx(0.0));
  CHECK(vspp_loss(speed, index, 1, 0) > 1e8);
  CHECK_THROWS_AS(vspp_loss(zeros, zeros, 4, 0), DataError);
  CHECK_THROWS_AS(vspp_loss(zeros, zeros, 0, -1), DataError);
}

TEST_CASE("uniform logits bound the loss") {
  std::mt19937_64 rng(1);
  const std::vector<double> zeros(4, 0.0);
  const double uniform = vspp_loss(zeros, zeros, 0, 0);
  double better = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s(4), x(4);
    for (auto& v : s) v = std::normal_distribution<double>()(rng);
    for (auto& v : x) v = std::normal_distribution<double>()(rng);
    const double l = vspp_loss(s, x, 1, 2);
    CHECK(l >= 0.0);
    if (l < uniform) better += 1.0;
  }
  CHECK(better > 0.0);
}

TEST_CASE("heads are independent linear maps") {
  LinearLayer speed(6, 4, ParamKind::head, 1), index(6, 4, ParamKind::head, 2);
  SUBCASE("zero feature and zero heads") {
    speed.weight().value.fill(0.0f);
    speed.bias().value.fill(0.0f);
    index.weight().value.fill(0.0f);
    index.bias().value.fill(0.0f);
    const auto out = pretext_heads_forward(Tensor({1, 6}, 0.0f), speed, index);
    for (float v : out.speed.storage()) CHECK(v == 0.0f);
    for (float v : out.index.storage()) CHECK(v == 0.0f);
  }
  SUBCASE("one-hot feature selects a weight column") {
    speed.bias().value.fill(0.0f);
    Tensor f({1, 6}, 0.0f);
    f[3] = 1.0f;
    const auto out = pretext_heads_forward(f, speed, index);
    for (int64_t o = 0; o < 4; ++o) CHECK(out.speed[o] == speed.weight().value[o * 6 + 3]);
  }
  SUBCASE("random inputs match a dot-product oracle") {
    std::mt19937_64 rng(3);
    const Tensor f = oracle::random_tensor<float>({3, 6}, rng);
    const auto out = pretext_heads_forward(f, speed, index);
    for (int64_t n = 0; n < 3; ++n) {
      for (int64_t o = 0; o < 4; ++o) {
        double s = speed.bias().value[o], x = index.bias().value[o];
        for (int64_t i = 0; i < 6; ++i) {
          s += static_cast<double>(speed.weight().value[o * 6 + i]) * f[n * 6 + i];
          x += static_cast<double>(index.weight().value[o * 6 + i]) * f[n * 6 + i];
        }
        CHECK(out.speed[n * 4 + o] == doctest::Approx(s).epsilon(1e-6));
        CHECK(out.index[n * 4 + o] == doctest::Approx(x).epsilon(1e-6));
      }
    }
    // Changing one head leaves the other untouched.
    index.weight().value.fill(0.5f);
    const auto again = pretext_heads_forward(f, speed, index);
    CHECK(again.speed == out.speed);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(pretext_heads_forward(Tensor({1, 5}), speed, index), ShapeError);
  }
}

TEST_CASE("one gradient step on a repeated sample lowers the loss") {
  BackboneSpec spec;
  spec.stage_channels = {8, 16};
  spec.input_frames = 16;
  spec.input_size = 8;
  Model m = build_backbone(spec, 5);
  LinearLayer& speed = m.add_head("speed", 4, 1);
  LinearLayer& index = m.add_head("index", 4, 2);
  apply_freeze_policy(m, {FreezeMode::adapters_only, true});
  const VsppConfig cfg{16, 4, {1, 2, 3, 4}};
  Video v(64, 1, 8, 8);
  std::mt19937_64 rng(6);
  for (auto& p : v.pixels) p = static_cast<uint8_t>(rng() % 256);
  const PretextSample s = make_vspp_sample(v, cfg, 7);
  const Tensor clip = s.clip.reshaped({1, 3, 16, 8, 8});
  auto loss_now = [&](bool train) {
    const Tensor f = m.forward_features(clip, false);
    const auto logits = pretext_heads_forward(f, speed, index, train);
    return vspp_loss_batch(logits, {s.speed_label}, {s.segment_index});
  };
  m.zero_grad();
  const Tensor f = m.forward_features(clip, true);
  const auto logits = pretext_heads_forward(f, speed, index, true);
  const BatchLoss before = vspp_loss_batch(logits, {s.speed_label}, {s.segment_index});
  Tensor g = speed.backward(before.grad_speed, true);
  ops::add_inplace(g, index.backward(before.grad_index, true));
  m.backward_features(g);
  SgdMomentum(1e-2, 0.0).step(m.parameters());
  CHECK(loss_now(false).loss < before.loss);
}

TEST_CASE("videopace clips use one stride") {
  const Video v = ramp_video(64);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const VideoPaceSample s = make_videopace_sample(v, {2}, 32, seed);
    std::vector<int64_t> want(32);
    for (int64_t k = 0; k < 32; ++k) want[k] = 2 * k;
    CHECK(s.source_frame_ids == want);
  }
  const Video w = ramp_video(16);
  const VideoPaceSample one = make_videopace_sample(w, {1}, 16, 3);
  Rng rng(0);
  const Tensor first = extract_clip(w, one.source_frame_ids, draw_augmentation(w, Augmentation::none(), rng));
  std::vector<int64_t> ids(16);
  std::iota(ids.begin(), ids.end(), 0);
  CHECK(one.source_frame_ids == ids);
  CHECK(one.clip == first);
  CHECK_THROWS_AS(make_videopace_sample(ramp_video(63), {1, 2}, 32, 0), DataError);
}

TEST_CASE("videopace labels are uniform over classes") {
  const Video v = ramp_video(128);
  std::vector<int64_t> counts(4, 0);
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = make_videopace_sample(v, {1, 2, 3, 4}, 32, seed);
    ++counts[static_cast<size_t>(s.speed_label)];
    const int64_t stride = s.speed_label + 1;
    for (size_t k = 1; k < s.source_frame_ids.size(); ++k)
      CHECK(s.source_frame_ids[k] - s.source_frame_ids[k - 1] == stride);
  }
  CHECK(chi_square_p(counts) > 0.01);
}
