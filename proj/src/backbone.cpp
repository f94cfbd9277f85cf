// SPDX-License-Identifier: Apache-2.0
#include "pecop/backbone.hpp"

#include <sstream>

#include "pecop/random.hpp"

namespace pecop {

const char* to_string(BackboneFamily family) noexcept {
  switch (family) {
    case BackboneFamily::inception3d: return "inception3d";
    case BackboneFamily::residual3d: return "residual3d";
  }
  return "?";
}

BackboneFamily backbone_family_from_string(const std::string& name) {
  if (name == "inception3d") return BackboneFamily::inception3d;
  if (name == "residual3d") return BackboneFamily::residual3d;
  throw ConfigError("unknown backbone family: " + name);
}

const char* to_string(FreezeMode mode) noexcept {
  switch (mode) {
    case FreezeMode::adapters_only: return "adapters_only";
    case FreezeMode::bn_affine_only: return "bn_affine_only";
    case FreezeMode::full: return "full";
    case FreezeMode::none_trainable: return "none_trainable";
  }
  return "?";
}

FreezeMode freeze_mode_from_string(const std::string& name) {
  if (name == "adapters_only") return FreezeMode::adapters_only;
  if (name == "bn_affine_only") return FreezeMode::bn_affine_only;
  if (name == "full") return FreezeMode::full;
  if (name == "none_trainable") return FreezeMode::none_trainable;
  throw ConfigError("unknown freeze policy: " + name);
}

void BackboneSpec::validate() const {
  if (stage_channels.empty()) throw ConfigError("backbone: at least one stage is required");
  if (stage_channels.size() != blocks_per_stage.size()) {
    throw ConfigError("backbone: stage_channels and blocks_per_stage lengths differ");
  }
  if (adapter_lambda <= 0) throw ConfigError("backbone: adapter_lambda must be positive");
  if (adapter_kernel <= 0 || adapter_kernel % 2 == 0) throw ConfigError("backbone: adapter_kernel must be odd");
  for (auto c : stage_channels) {
    if (c < 4) throw ConfigError("backbone: stage channels must be at least 4");
    if (c % adapter_lambda != 0) {
      throw ConfigError("backbone: stage channel " + std::to_string(c) + " not divisible by adapter_lambda " +
                        std::to_string(adapter_lambda));
    }
  }
  for (auto b : blocks_per_stage)
    if (b < 1) throw ConfigError("backbone: blocks_per_stage entries must be positive");
  if (input_frames < 1 || input_size < 2) throw ConfigError("backbone: input extents must be positive");
  if (stem_channels < 0) throw ConfigError("backbone: stem_channels must be non-negative");
}

int64_t BackboneSpec::resolved_stem_channels() const {
  if (stem_channels > 0) return stem_channels;
  return family == BackboneFamily::residual3d ? stage_channels.front() : std::max<int64_t>(1, stage_channels.front() / 2);
}

int64_t BackboneSpec::num_blocks() const {
  int64_t n = 0;
  for (auto b : blocks_per_stage) n += b;
  return n;
}

int64_t BackboneSpec::num_bn_layers() const {
  int64_t count = 1;  // stem
  if (family == BackboneFamily::inception3d) return count + 4 * num_blocks();
  int64_t in = resolved_stem_channels();
  for (size_t s = 0; s < stage_channels.size(); ++s) {
    for (int64_t b = 0; b < blocks_per_stage[s]; ++b) {
      const bool strided = s > 0 && b == 0;
      count += 2;
      if (strided || in != stage_channels[s]) ++count;
      in = stage_channels[s];
    }
  }
  return count;
}

std::string BackboneSpec::architecture_key() const {
  std::ostringstream os;
  os << to_string(family) << "|stem=" << resolved_stem_channels() << "|stages=";
  for (size_t i = 0; i < stage_channels.size(); ++i) os << (i ? "," : "") << stage_channels[i];
  os << "|blocks=";
  for (size_t i = 0; i < blocks_per_stage.size(); ++i) os << (i ? "," : "") << blocks_per_stage[i];
  return os.str();
}

uint64_t BackboneSpec::digest() const { return fnv1a64(architecture_key()); }

namespace {

constexpr ops::Triple kOne{1, 1, 1};
constexpr ops::Triple kThree{3, 3, 3};
constexpr ops::Triple kZero{0, 0, 0};

AdapterConfig adapter_config(const BackboneSpec& spec, int64_t channels) {
  AdapterConfig c;
  c.c_in = channels;
  c.c_out = channels;
  c.lambda_compress = spec.adapter_lambda;
  c.kernel = spec.adapter_kernel;
  c.init_mode = spec.adapter_init;
  return c;
}

// Parallel 1x1x1 | 1x1x1->3x3x3 | pool->1x1x1 branches, concatenated, then
// the adapter on the concatenated channels.
class InceptionBlock : public Layer {
 public:
  InceptionBlock(const BackboneSpec& spec, int64_t in, int64_t out, uint64_t seed, const std::string& name) {
    const int64_t quarter = out / 4;
    widths_ = {quarter, out - 2 * quarter, quarter};
    auto b0 = std::make_unique<Sequential>();
    b0->add("unit", make_conv_unit(in, widths_[0], kOne, kOne, kZero, mix_seed(seed, name + ".branch0")));
    auto b1 = std::make_unique<Sequential>();
    b1->add("reduce", make_conv_unit(in, quarter, kOne, kOne, kZero, mix_seed(seed, name + ".branch1.reduce")));
    b1->add("unit", make_conv_unit(quarter, widths_[1], kThree, kOne, kOne, mix_seed(seed, name + ".branch1")));
    auto b2 = std::make_unique<Sequential>();
    b2->emplace<MaxPoolLayer>("pool", ops::PoolGeometry{kThree, kOne, kOne});
    b2->add("unit", make_conv_unit(in, widths_[2], kOne, kOne, kZero, mix_seed(seed, name + ".branch2")));
    branches_.push_back(std::move(b0));
    branches_.push_back(std::move(b1));
    branches_.push_back(std::move(b2));
    if (spec.with_adapters) {
      adapter_ = std::make_unique<AdapterLayer>(adapter_config(spec, out), mix_seed(seed, name + ".adapter"));
    }
  }

  Tensor forward(const Tensor& input, bool train) override {
    std::vector<Tensor> outs;
    outs.reserve(branches_.size());
    for (auto& b : branches_) outs.push_back(b->forward(input, train));
    std::vector<const Tensor*> parts;
    for (auto& o : outs) parts.push_back(&o);
    Tensor cat = ops::concat_channels(parts);
    return adapter_ ? adapter_->forward(cat, train) : cat;
  }

  Tensor backward(const Tensor& grad_output, bool need_input_grad) override {
    bool branches_trainable = false;
    for (auto& b : branches_) branches_trainable = branches_trainable || b->any_trainable();
    const bool need_branch_grad = need_input_grad || branches_trainable;
    Tensor g = grad_output;
    if (adapter_) g = adapter_->backward(grad_output, need_branch_grad);
    if (!need_branch_grad) return {};
    auto parts = ops::split_channels(g, widths_);
    Tensor grad_input;
    for (size_t i = 0; i < branches_.size(); ++i) {
      Tensor gi = branches_[i]->backward(parts[i], need_input_grad);
      if (!need_input_grad) continue;
      if (grad_input.empty()) {
        grad_input = std::move(gi);
      } else {
        ops::add_inplace(grad_input, gi);
      }
    }
    return grad_input;
  }

  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override {
    for (size_t i = 0; i < branches_.size(); ++i) {
      branches_[i]->collect(prefix + ".branch" + std::to_string(i), params, buffers);
    }
    if (adapter_) adapter_->collect(prefix + ".adapter", params, buffers);
  }

  bool any_trainable() const override {
    for (auto& b : branches_)
      if (b->any_trainable()) return true;
    return adapter_ && adapter_->any_trainable();
  }

  void set_batch_statistics(bool enabled) override {
    for (auto& b : branches_) b->set_batch_statistics(enabled);
  }

  void visit(const std::function<void(Layer&)>& fn) override {
    fn(*this);
    for (auto& b : branches_) b->visit(fn);
    if (adapter_) adapter_->visit(fn);
  }

 private:
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<int64_t> widths_;
  std::unique_ptr<AdapterLayer> adapter_;
};

// conv-BN-ReLU-conv-BN-adapter, + shortcut, ReLU.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(const BackboneSpec& spec, int64_t in, int64_t out, bool strided, uint64_t seed,
                const std::string& name) {
    const ops::Triple stride = strided ? ops::Triple{2, 2, 2} : kOne;
    main_.emplace<Conv3dLayer>("conv1", in, out, kThree, stride, kOne, mix_seed(seed, name + ".conv1"));
    main_.emplace<BatchNormLayer>("bn1", out);
    main_.emplace<ReluLayer>("relu1");
    main_.emplace<Conv3dLayer>("conv2", out, out, kThree, kOne, kOne, mix_seed(seed, name + ".conv2"));
    main_.emplace<BatchNormLayer>("bn2", out);
    if (spec.with_adapters) {
      main_.emplace<AdapterLayer>("adapter", adapter_config(spec, out), mix_seed(seed, name + ".adapter"));
    }
    if (strided || in != out) {
      shortcut_ = std::make_unique<Sequential>();
      shortcut_->emplace<Conv3dLayer>("conv", in, out, kOne, stride, kZero, mix_seed(seed, name + ".shortcut"));
      shortcut_->emplace<BatchNormLayer>("bn", out);
    }
  }

  Tensor forward(const Tensor& input, bool train) override {
    Tensor sum = main_.forward(input, train);
    if (shortcut_) {
      ops::add_inplace(sum, shortcut_->forward(input, train));
    } else {
      ops::add_inplace(sum, input);
    }
    Tensor out = ops::relu_forward(sum);
    if (train) output_ = out;
    return out;
  }

  Tensor backward(const Tensor& grad_output, bool need_input_grad) override {
    Tensor g = ops::relu_backward(grad_output, output_);
    Tensor grad_input = main_.backward(g, need_input_grad);
    if (shortcut_) {
      Tensor gs = shortcut_->backward(g, need_input_grad);
      if (need_input_grad) ops::add_inplace(grad_input, gs);
    } else if (need_input_grad) {
      ops::add_inplace(grad_input, g);
    }
    return grad_input;
  }

  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override {
    main_.collect(prefix, params, buffers);
    if (shortcut_) shortcut_->collect(prefix + ".shortcut", params, buffers);
  }

  bool any_trainable() const override { return main_.any_trainable() || (shortcut_ && shortcut_->any_trainable()); }

  void set_batch_statistics(bool enabled) override {
    main_.set_batch_statistics(enabled);
    if (shortcut_) shortcut_->set_batch_statistics(enabled);
  }

  void visit(const std::function<void(Layer&)>& fn) override {
    fn(*this);
    main_.visit(fn);
    if (shortcut_) shortcut_->visit(fn);
  }

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;
  Tensor output_;
};

}  // namespace

Model::Model(BackboneSpec spec, uint64_t seed) : spec_(std::move(spec)), backbone_(std::make_unique<Sequential>()) {
  spec_.validate();
  const int64_t stem = spec_.resolved_stem_channels();
  backbone_->add("stem", make_conv_unit(3, stem, kThree, {1, 2, 2}, kOne, mix_seed(seed, "stem")));
  int64_t in = stem;
  for (size_t s = 0; s < spec_.stage_channels.size(); ++s) {
    const int64_t out = spec_.stage_channels[s];
    const std::string stage = "stage" + std::to_string(s);
    if (spec_.family == BackboneFamily::inception3d && s > 0) {
      backbone_->emplace<MaxPoolLayer>(stage + ".pool", ops::PoolGeometry{kThree, {2, 2, 2}, kOne});
    }
    for (int64_t b = 0; b < spec_.blocks_per_stage[s]; ++b) {
      const std::string name = stage + ".block" + std::to_string(b);
      if (spec_.family == BackboneFamily::inception3d) {
        backbone_->add(name, std::make_unique<InceptionBlock>(spec_, in, out, seed, name));
      } else {
        backbone_->add(name, std::make_unique<ResidualBlock>(spec_, in, out, s > 0 && b == 0, seed, name));
      }
      in = out;
    }
  }
  backbone_->emplace<GlobalAvgPoolLayer>("pool");

  backbone_->visit([this](Layer& layer) {
    if (auto* a = dynamic_cast<AdapterLayer*>(&layer)) adapters_.push_back(a);
    if (auto* bn = dynamic_cast<BatchNormLayer*>(&layer)) batch_norms_.push_back(bn);
  });
}

Tensor Model::forward_features(const Tensor& clips, bool train) {
  if (clips.rank() != 5 || clips.dim(1) != 3) {
    throw ShapeError("model expects (N, 3, D, H, W) clips, got " + shape_string(clips.shape()));
  }
  return backbone_->forward(clips, train);
}

void Model::backward_features(const Tensor& grad_features) { backbone_->backward(grad_features, false); }

LinearLayer& Model::add_head(const std::string& name, int64_t out_features, uint64_t seed, bool zero_init,
                             int64_t in_features) {
  if (in_features < 0) in_features = embedding_dim();
  auto layer = std::make_unique<LinearLayer>(in_features, out_features, ParamKind::head,
                                             mix_seed(seed, "head." + name), zero_init);
  layer->weight().trainable = policy_.heads_trainable;
  layer->bias().trainable = policy_.heads_trainable;
  auto& ref = *layer;
  heads_[name] = std::move(layer);
  return ref;
}

LinearLayer& Model::head(const std::string& name) {
  auto it = heads_.find(name);
  if (it == heads_.end()) throw ConfigError("model has no head named " + name);
  return *it->second;
}

std::vector<std::string> Model::head_names() const {
  std::vector<std::string> names;
  for (const auto& [name, layer] : heads_) names.push_back(name);
  return names;
}

std::vector<NamedParameter> Model::parameters() {
  std::vector<NamedParameter> params;
  std::vector<NamedBuffer> buffers;
  backbone_->collect("", params, buffers);
  for (auto& [name, layer] : heads_) layer->collect("head." + name, params, buffers);
  return params;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedParameter> params;
  std::vector<NamedBuffer> buffers;
  backbone_->collect("", params, buffers);
  return buffers;
}

std::vector<RegistryEntry> Model::registry() {
  std::vector<RegistryEntry> entries;
  for (auto& p : parameters()) entries.push_back({p.name, p.param->value.shape(), p.param->kind, p.param->trainable});
  return entries;
}

Parameter* Model::find_parameter(const std::string& name) {
  for (auto& p : parameters())
    if (p.name == name) return p.param;
  return nullptr;
}

void Model::set_batch_statistics(bool enabled) { backbone_->set_batch_statistics(enabled); }

void Model::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

Model build_backbone(const BackboneSpec& spec, uint64_t seed) { return Model(spec, seed); }

Model& apply_freeze_policy(Model& model, const FreezePolicy& policy) {
  for (auto& p : model.parameters()) {
    bool trainable = false;
    switch (p.param->kind) {
      case ParamKind::head: trainable = policy.heads_trainable; break;
      case ParamKind::adapter:
        trainable = policy.mode == FreezeMode::adapters_only || policy.mode == FreezeMode::full;
        break;
      case ParamKind::bn_affine:
        trainable = policy.mode == FreezeMode::bn_affine_only || policy.mode == FreezeMode::full;
        break;
      case ParamKind::backbone: trainable = policy.mode == FreezeMode::full; break;
    }
    p.param->trainable = trainable;
  }
  model.set_freeze_policy(policy);
  return model;
}

TrainabilityReport trainability_report(Model& model) {
  TrainabilityReport r;
  for (auto kind : {ParamKind::backbone, ParamKind::bn_affine, ParamKind::adapter, ParamKind::head}) r.per_kind[kind];
  for (auto& p : model.parameters()) {
    const auto n = static_cast<int64_t>(p.param->value.size());
    auto& k = r.per_kind[p.param->kind];
    k.total += n;
    r.total += n;
    if (p.param->trainable) {
      k.trainable += n;
      r.trainable += n;
    }
  }
  r.trainable_fraction = r.total > 0 ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
  r.trainable_bytes = 4 * r.trainable;
  r.full_bytes = 4 * r.total;
  return r;
}

BackboneSpec paper_scale_reference_spec() {
  BackboneSpec spec;
  spec.family = BackboneFamily::inception3d;
  spec.stem_channels = 192;
  spec.stage_channels = {256, 480, 512, 832, 1024};
  spec.blocks_per_stage = {1, 1, 4, 2, 1};
  spec.input_frames = 32;
  spec.input_size = 224;
  spec.adapter_lambda = 4;
  return spec;
}

}  // namespace pecop
