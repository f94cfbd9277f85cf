// SPDX-License-Identifier: Apache-2.0
#include "pecop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

#include "pecop/losses.hpp"

namespace pecop {

std::string to_jsonl(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  return j.dump();
}

JsonlMetricsSink::JsonlMetricsSink(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw DataError("cannot open metrics file " + path.string());
}

void JsonlMetricsSink::record(const MetricsRecord& r) { out_ << to_jsonl(r) << '\n' << std::flush; }

void SgdMomentum::step(const std::vector<NamedParameter>& params) {
  for (const auto& np : params) {
    Parameter& p = *np.param;
    if (!p.trainable) continue;
    auto [it, fresh] = velocity_.try_emplace(&p, p.value.shape());
    Tensor& v = it->second;
    if (v.shape() != p.value.shape()) throw ShapeError("optimizer state shape changed for " + np.name);
    float* w = p.value.ptr();
    float* vel = v.ptr();
    const float* g = p.grad.ptr();
    for (size_t i = 0; i < p.value.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      w[i] -= lr_ * vel[i];
    }
  }
}

std::vector<int64_t> temporal_crop(int64_t video_frames, int64_t clip_len, bool random, Rng& rng) {
  if (video_frames < clip_len) {
    throw DataError("video has " + std::to_string(video_frames) + " frames; clips need " + std::to_string(clip_len));
  }
  const int64_t start = random ? std::uniform_int_distribution<int64_t>(0, video_frames - clip_len)(rng)
                               : (video_frames - clip_len) / 2;
  std::vector<int64_t> ids(static_cast<size_t>(clip_len));
  for (int64_t k = 0; k < clip_len; ++k) ids[k] = start + k;
  return ids;
}

namespace {

constexpr const char* kActionHead = "action";
constexpr const char* kSpeedHead = "speed";
constexpr const char* kIndexHead = "index";
constexpr const char* kPaceHead = "pace";
constexpr const char* kScoreHead = "score";
constexpr const char* kPairwiseHead = "pairwise";

Tensor stack_clips(const std::vector<Tensor>& clips) {
  Shape shape = clips.front().shape();
  shape.insert(shape.begin(), static_cast<int64_t>(clips.size()));
  Tensor out(shape);
  const size_t per = clips.front().size();
  for (size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].shape() != clips.front().shape()) throw ShapeError("clips in a batch differ in shape");
    std::copy_n(clips[i].ptr(), per, out.ptr() + i * per);
  }
  return out;
}

Tensor rows(const Tensor& m, int64_t begin, int64_t count) {
  const int64_t F = m.dim(1);
  Tensor out({count, F});
  std::copy_n(m.ptr() + begin * F, count * F, out.ptr());
  return out;
}

void require_nonempty(const LoadedDataset& data, const char* stage) {
  if (data.videos.empty()) throw DataError(std::string(stage) + ": dataset is empty");
}

void require_finite(double loss, const char* stage) {
  if (!std::isfinite(loss)) throw NumericError(std::string(stage) + ": loss became non-finite");
}

struct SampleRef {
  size_t video;
  uint64_t seed;
};

std::vector<SampleRef> epoch_samples(size_t n_videos, int64_t per_video, uint64_t seed, int64_t epoch) {
  std::vector<SampleRef> samples;
  for (size_t v = 0; v < n_videos; ++v)
    for (int64_t k = 0; k < per_video; ++k)
      samples.push_back({v, mix_seed(seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(v), static_cast<uint64_t>(k))});
  Rng rng(mix_seed(mix_seed(seed, "order"), static_cast<uint64_t>(epoch)));
  std::shuffle(samples.begin(), samples.end(), rng);
  return samples;
}

/// Runs epochs x batches; `step` computes gradients for one batch and returns its loss.
template <typename Step>
void train_loop(Model& model, const char* stage, int64_t epochs, int64_t batch_size, int64_t per_video,
                size_t n_videos, uint64_t seed, SgdMomentum& optimizer, MetricsSink* sink, StageResult& result,
                Step&& step) {
  const auto params = model.parameters();
  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    const auto samples = epoch_samples(n_videos, per_video, seed, epoch);
    double epoch_sum = 0.0;
    int64_t steps = 0;
    for (size_t b = 0; b < samples.size(); b += static_cast<size_t>(batch_size)) {
      const std::vector<SampleRef> batch(samples.begin() + static_cast<std::ptrdiff_t>(b),
                                         samples.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(samples.size(), b + batch_size)));
      for (const auto& np : params) np.param->zero_grad();
      const double loss = step(batch);
      require_finite(loss, stage);
      optimizer.step(params);
      result.step_losses.push_back(loss);
      if (sink) sink->record({stage, epoch, global_step, loss});
      epoch_sum += loss;
      ++steps;
      ++global_step;
    }
    result.epoch_losses.push_back(steps ? epoch_sum / static_cast<double>(steps) : 0.0);
  }
}

std::vector<std::string> task_classes(const LoadedDataset& data) {
  std::set<std::string> names;
  for (const auto& r : data.records) names.insert(r.task);
  return {names.begin(), names.end()};
}

std::string join_names(const std::vector<std::string>& names) {
  std::string s;
  for (size_t i = 0; i < names.size(); ++i) s += (i ? "," : "") + names[i];
  return s;
}

std::map<std::string, std::string> base_metadata(const RunConfig& cfg, Stage stage, int64_t epochs) {
  return {{"stage", to_string(stage)},
          {"epochs", std::to_string(epochs)},
          {"seed", std::to_string(cfg.seed)},
          {"format_version", std::to_string(kCheckpointFormatVersion)},
          {"backbone", cfg.backbone.architecture_key()}};
}

Tensor supervised_clip(const Video& video, const RunConfig& cfg, uint64_t seed) {
  Rng rng(mix_seed(seed, "clip"));
  const auto ids = temporal_crop(video.frames, cfg.clip_len(), true, rng);
  const auto draw = draw_augmentation(video, cfg.train_augmentation(), rng);
  return extract_clip(video, ids, draw);
}

bool has_trainable(Model& model) {
  for (const auto& np : model.parameters())
    if (np.param->trainable) return true;
  return false;
}

}  // namespace

StageResult run_pretrain_general(const RunConfig& cfg, const LoadedDataset& data, MetricsSink* sink) {
  cfg.validate();
  require_nonempty(data, "pretrain_general");
  BackboneSpec spec = cfg.backbone;
  spec.with_adapters = false;
  Model model(spec, mix_seed(cfg.seed, "model"));
  const auto classes = task_classes(data);
  std::map<std::string, int64_t> label_of;
  for (size_t i = 0; i < classes.size(); ++i) label_of[classes[i]] = static_cast<int64_t>(i);
  LinearLayer& head = model.add_head(kActionHead, static_cast<int64_t>(classes.size()), cfg.seed);
  apply_freeze_policy(model, {FreezeMode::full, true});
  model.set_batch_statistics(true);

  StageResult result;
  SgdMomentum opt(cfg.general.lr, cfg.optimizer.momentum);
  train_loop(model, "pretrain_general", cfg.general.epochs, cfg.general.batch_size, cfg.general.clips_per_video,
             data.videos.size(), mix_seed(cfg.seed, "general"), opt, sink, result,
             [&](const std::vector<SampleRef>& batch) {
               std::vector<Tensor> clips;
               std::vector<int64_t> labels;
               for (const auto& s : batch) {
                 clips.push_back(supervised_clip(data.videos[s.video], cfg, s.seed));
                 labels.push_back(label_of.at(data.records[s.video].task));
               }
               const Tensor feats = model.forward_features(stack_clips(clips), true);
               const Tensor logits = head.forward(feats, true);
               Tensor grad;
               const double loss = cross_entropy_batch(logits, labels, &grad);
               model.backward_features(head.backward(grad, true));
               return loss;
             });
  model.set_batch_statistics(false);
  auto meta = base_metadata(cfg, Stage::pretrain_general, cfg.general.epochs);
  meta["classes"] = join_names(classes);
  result.checkpoint = capture_checkpoint(model, IncludedParams::all, std::move(meta));
  return result;
}

StageResult run_continual_pretrain(const RunConfig& cfg, const Checkpoint& base, const LoadedDataset& data,
                                   MetricsSink* sink) {
  cfg.validate();
  if (cfg.freeze.mode == FreezeMode::none_trainable && !cfg.freeze.heads_trainable) {
    throw ConfigError("freeze policy none_trainable with heads_trainable=false leaves nothing to optimize");
  }
  require_nonempty(data, "continual_pretrain");
  Model model(cfg.backbone, mix_seed(cfg.seed, "model"));
  restore_checkpoint(model, base, nullptr, {true, true});

  const bool vspp = cfg.pretext == PretextKind::vspp;
  const auto n_speed = static_cast<int64_t>(vspp ? cfg.vspp.speed_classes.size() : cfg.videopace_classes.size());
  LinearLayer& speed_head = model.add_head(vspp ? kSpeedHead : kPaceHead, n_speed, cfg.seed);
  LinearLayer* index_head = vspp ? &model.add_head(kIndexHead, cfg.vspp.num_segments, cfg.seed) : nullptr;
  apply_freeze_policy(model, cfg.freeze);
  if (!has_trainable(model)) throw ConfigError("freeze policy leaves no trainable parameters");
  model.set_batch_statistics(cfg.freeze.mode == FreezeMode::full);

  const Augmentation aug = cfg.train_augmentation();
  StageResult result;
  SgdMomentum opt(cfg.optimizer.lr, cfg.optimizer.momentum);
  train_loop(model, "continual_pretrain", cfg.epochs, cfg.batch_size, cfg.samples_per_video, data.videos.size(),
             mix_seed(cfg.seed, "pretext"), opt, sink, result, [&](const std::vector<SampleRef>& batch) {
               std::vector<Tensor> clips;
               std::vector<int64_t> speed, index;
               for (const auto& s : batch) {
                 const Video& video = data.videos[s.video];
                 if (vspp) {
                   auto sample = make_vspp_sample(video, cfg.vspp, s.seed, aug);
                   clips.push_back(std::move(sample.clip));
                   speed.push_back(sample.speed_label);
                   index.push_back(sample.segment_index);
                 } else {
                   auto sample = make_videopace_sample(video, cfg.videopace_classes, cfg.vspp.clip_len, s.seed, aug);
                   clips.push_back(std::move(sample.clip));
                   speed.push_back(sample.speed_label);
                 }
               }
               const Tensor feats = model.forward_features(stack_clips(clips), true);
               if (vspp) {
                 const PretextLogits logits = pretext_heads_forward(feats, speed_head, *index_head, true);
                 const BatchLoss bl = vspp_loss_batch(logits, speed, index);
                 Tensor g = speed_head.backward(bl.grad_speed, true);
                 ops::add_inplace(g, index_head->backward(bl.grad_index, true));
                 model.backward_features(g);
                 return bl.loss;
               }
               const Tensor logits = speed_head.forward(feats, true);
               Tensor grad;
               const double loss = cross_entropy_batch(logits, speed, &grad);
               model.backward_features(speed_head.backward(grad, true));
               return loss;
             });
  model.set_batch_statistics(false);
  auto meta = base_metadata(cfg, Stage::continual_pretrain, cfg.epochs);
  meta["pretext"] = to_string(cfg.pretext);
  meta["freeze"] = to_string(cfg.freeze.mode);
  result.checkpoint = capture_checkpoint(model, IncludedParams::trainable_only, std::move(meta));
  return result;
}

Model restore_model(const RunConfig& cfg, const Checkpoint& checkpoint, const Checkpoint* base,
                    const RestoreOptions& options) {
  BackboneSpec spec = cfg.backbone;
  spec.with_adapters = checkpoint.has_kind(BlobKind::adapter) || (base && base->has_kind(BlobKind::adapter));
  Model model(spec, mix_seed(cfg.seed, "model"));
  restore_checkpoint(model, checkpoint, base, options);
  return model;
}

StageResult run_finetune(const RunConfig& cfg, const Checkpoint& checkpoint, const Checkpoint* base,
                         const LoadedDataset& train, MetricsSink* sink) {
  cfg.validate();
  require_nonempty(train, "finetune");
  for (const auto& r : train.records) {
    if (!cfg.support.contains(r.score)) {
      throw DataError("record " + r.video_path + ": score " + std::to_string(r.score) + " outside the head support [" +
                      std::to_string(cfg.support.min_score) + ", " + std::to_string(cfg.support.max_score) + "]");
    }
  }
  Model model = restore_model(cfg, checkpoint, base, {false, true});
  const bool usdl = cfg.head == HeadKind::usdl;
  const int64_t F = model.embedding_dim();
  LinearLayer& head = usdl ? model.add_head(kScoreHead, cfg.support.num_bins, cfg.seed)
                           : model.add_head(kPairwiseHead, 1, cfg.seed, true, 2 * F + 1);
  const FreezePolicy policy{cfg.finetune_adapters_only ? FreezeMode::adapters_only : FreezeMode::full, true};
  apply_freeze_policy(model, policy);
  model.set_batch_statistics(policy.mode == FreezeMode::full);

  std::vector<ScoreTarget> targets;
  if (usdl) {
    for (const auto& r : train.records) {
      targets.push_back(gaussian_target(r.score, cfg.support, cfg.usdl_sigma * cfg.support.bin_width()));
    }
  }

  StageResult result;
  SgdMomentum opt(cfg.finetune.lr, cfg.finetune_momentum);
  const size_t n = train.videos.size();
  train_loop(model, "finetune", cfg.finetune.epochs, cfg.finetune.batch_size, cfg.finetune.clips_per_video, n,
             mix_seed(cfg.seed, "finetune"), opt, sink, result, [&](const std::vector<SampleRef>& batch) {
               std::vector<Tensor> clips;
               for (const auto& s : batch) clips.push_back(supervised_clip(train.videos[s.video], cfg, s.seed));
               if (usdl) {
                 std::vector<ScoreTarget> batch_targets;
                 for (const auto& s : batch) batch_targets.push_back(targets[s.video]);
                 const Tensor feats = model.forward_features(stack_clips(clips), true);
                 const UsdlBatch ub = usdl_loss_batch(head.forward(feats, true), batch_targets);
                 model.backward_features(head.backward(ub.grad_logits, true));
                 return ub.kl;
               }
               // Pairwise: each query is paired with a different training video when one exists.
               const auto N = static_cast<int64_t>(batch.size());
               std::vector<double> exemplar_scores, deltas;
               for (const auto& s : batch) {
                 Rng rng(mix_seed(s.seed, "exemplar"));
                 size_t e = s.video;
                 if (n > 1) {
                   e = std::uniform_int_distribution<size_t>(0, n - 2)(rng);
                   if (e >= s.video) ++e;
                 }
                 clips.push_back(supervised_clip(train.videos[e], cfg, mix_seed(s.seed, "exemplar_clip")));
                 exemplar_scores.push_back(train.records[e].score);
                 deltas.push_back(train.records[s.video].score - train.records[e].score);
               }
               const Tensor feats = model.forward_features(stack_clips(clips), true);
               const Tensor input = pairwise_regressor_input(rows(feats, 0, N), rows(feats, N, N), exemplar_scores);
               const Tensor pred = head.forward(input, true);
               Tensor grad_pred({N, 1});
               double loss = 0.0;
               for (int64_t i = 0; i < N; ++i) {
                 const double err = pred[i] - deltas[i];
                 loss += err * err;
                 grad_pred[i] = static_cast<float>(2.0 * err / static_cast<double>(N));
               }
               const Tensor grad_input = head.backward(grad_pred, true);
               Tensor grad_feats({2 * N, F});
               for (int64_t i = 0; i < N; ++i) {
                 const float* row = grad_input.ptr() + i * (2 * F + 1);
                 std::copy_n(row, F, grad_feats.ptr() + i * F);
                 std::copy_n(row + F, F, grad_feats.ptr() + (N + i) * F);
               }
               model.backward_features(grad_feats);
               return loss / static_cast<double>(N);
             });
  model.set_batch_statistics(false);
  auto meta = base_metadata(cfg, Stage::finetune, cfg.finetune.epochs);
  meta["head"] = to_string(cfg.head);
  result.checkpoint = capture_checkpoint(model, IncludedParams::all, std::move(meta));
  return result;
}

double evaluate_pretext_loss(Model& model, const RunConfig& cfg, const LoadedDataset& data, uint64_t seed) {
  require_nonempty(data, "evaluate_pretext_loss");
  model.set_batch_statistics(false);
  const bool vspp = cfg.pretext == PretextKind::vspp;
  LinearLayer& speed_head = model.head(vspp ? kSpeedHead : kPaceHead);
  double total = 0.0;
  int64_t count = 0;
  const Augmentation aug = cfg.eval_augmentation();
  for (size_t v = 0; v < data.videos.size(); ++v) {
    std::vector<Tensor> clips;
    std::vector<int64_t> speed, index;
    for (int64_t k = 0; k < cfg.samples_per_video; ++k) {
      const uint64_t s = mix_seed(seed, static_cast<uint64_t>(v), static_cast<uint64_t>(k));
      if (vspp) {
        auto sample = make_vspp_sample(data.videos[v], cfg.vspp, s, aug);
        clips.push_back(std::move(sample.clip));
        speed.push_back(sample.speed_label);
        index.push_back(sample.segment_index);
      } else {
        auto sample = make_videopace_sample(data.videos[v], cfg.videopace_classes, cfg.vspp.clip_len, s, aug);
        clips.push_back(std::move(sample.clip));
        speed.push_back(sample.speed_label);
      }
    }
    const Tensor feats = model.forward_features(stack_clips(clips), false);
    const auto N = static_cast<double>(clips.size());
    if (vspp) {
      const auto logits = pretext_heads_forward(feats, speed_head, model.head(kIndexHead), false);
      total += vspp_loss_batch(logits, speed, index).loss * N;
    } else {
      total += cross_entropy_batch(speed_head.forward(feats, false), speed, nullptr) * N;
    }
    count += static_cast<int64_t>(clips.size());
  }
  return total / static_cast<double>(count);
}

namespace {

// Mean feature over `clips` evenly spaced centre-cropped clips.
Tensor video_features(Model& model, const RunConfig& cfg, const LoadedDataset& data) {
  const int64_t F = model.embedding_dim();
  const int64_t T = cfg.clip_len();
  const auto V = static_cast<int64_t>(data.videos.size());
  Tensor out({V, F});
  const Augmentation aug = cfg.eval_augmentation();
  std::vector<std::pair<int64_t, Tensor>> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    std::vector<Tensor> clips;
    for (auto& [v, c] : pending) clips.push_back(std::move(c));
    const Tensor feats = model.forward_features(stack_clips(clips), false);
    for (size_t i = 0; i < pending.size(); ++i)
      for (int64_t f = 0; f < F; ++f)
        out[pending[i].first * F + f] += feats[static_cast<int64_t>(i) * F + f] / static_cast<float>(cfg.eval_clips);
    pending.clear();
  };
  for (int64_t v = 0; v < V; ++v) {
    const Video& video = data.videos[v];
    if (video.frames < T) throw DataError(data.records[v].video_path + ": shorter than the clip length");
    Rng rng(0);
    const AugmentationDraw draw = draw_augmentation(video, aug, rng);
    for (int64_t c = 0; c < cfg.eval_clips; ++c) {
      const int64_t start = cfg.eval_clips == 1 ? (video.frames - T) / 2 : c * (video.frames - T) / (cfg.eval_clips - 1);
      std::vector<int64_t> ids(static_cast<size_t>(T));
      for (int64_t k = 0; k < T; ++k) ids[k] = start + k;
      pending.emplace_back(v, extract_clip(video, ids, draw));
      if (static_cast<int64_t>(pending.size()) >= cfg.finetune.batch_size) flush();
    }
  }
  flush();
  return out;
}

}  // namespace

std::vector<double> predict_scores(Model& model, const RunConfig& cfg, const LoadedDataset& data,
                                   const LoadedDataset* exemplars) {
  model.set_batch_statistics(false);
  const Tensor feats = video_features(model, cfg, data);
  const int64_t V = feats.dim(0), F = feats.dim(1);
  std::vector<double> scores(static_cast<size_t>(V));

  if (model.has_head(kScoreHead)) {
    const Tensor logits = model.head(kScoreHead).forward(feats, false);
    const int64_t B = logits.dim(1);
    for (int64_t v = 0; v < V; ++v) {
      std::vector<double> row(logits.ptr() + v * B, logits.ptr() + (v + 1) * B);
      scores[v] = usdl_predict_score(softmax<double>(row), cfg.support);
    }
    return scores;
  }
  if (!model.has_head(kPairwiseHead)) throw CompatibilityError("model has no score head");
  if (!exemplars || exemplars->videos.empty()) throw DataError("pairwise prediction needs exemplar videos");

  // Exemplars spread evenly over the score-sorted exemplar pool.
  std::vector<size_t> order(exemplars->videos.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return exemplars->records[a].score < exemplars->records[b].score; });
  const auto K = std::min<size_t>(static_cast<size_t>(cfg.pairwise_exemplars), order.size());
  LoadedDataset chosen;
  for (size_t k = 0; k < K; ++k) {
    const size_t pos = K == 1 ? order.size() / 2 : k * (order.size() - 1) / (K - 1);
    chosen.videos.push_back(exemplars->videos[order[pos]]);
    chosen.records.push_back(exemplars->records[order[pos]]);
  }
  const Tensor ex_feats = video_features(model, cfg, chosen);
  std::vector<std::pair<std::vector<float>, double>> ex;
  for (size_t k = 0; k < K; ++k) {
    ex.emplace_back(std::vector<float>(ex_feats.ptr() + k * F, ex_feats.ptr() + (k + 1) * F),
                    static_cast<double>(chosen.records[k].score));
  }
  LinearLayer& reg = model.head(kPairwiseHead);
  for (int64_t v = 0; v < V; ++v) {
    scores[v] = pairwise_predict(std::span<const float>(feats.ptr() + v * F, static_cast<size_t>(F)), ex, reg);
  }
  return scores;
}

}  // namespace pecop
