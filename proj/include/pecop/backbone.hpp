// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pecop/layers.hpp"

namespace pecop {

enum class BackboneFamily { inception3d, residual3d };

const char* to_string(BackboneFamily family) noexcept;
BackboneFamily backbone_family_from_string(const std::string& name);

/// Layered 3D-conv network description.
///
/// inception3d: conv stem, then per block three parallel branches
/// (1x1x1 | 1x1x1 -> 3x3x3 | 3x3x3 max-pool -> 1x1x1), each a conv-BN-ReLU
/// unit, concatenated to the stage width and followed by one adapter.
/// Stages after the first start with a stride-2 max-pool.
///
/// residual3d: conv stem, then per block conv-BN-ReLU-conv-BN-adapter, the
/// residual add and a ReLU. The first block of every later stage has
/// stride 2 and a 1x1x1 conv-BN projection shortcut.
///
/// Both end in global average pooling; the embedding is the last stage width.
struct BackboneSpec {
  BackboneFamily family = BackboneFamily::inception3d;
  std::vector<int64_t> stage_channels{32, 64};
  std::vector<int64_t> blocks_per_stage{1, 1};
  int64_t input_frames = 16;
  int64_t input_size = 56;
  int64_t stem_channels = 0;  // 0 selects the family default
  int64_t adapter_lambda = 4;
  int64_t adapter_kernel = 3;
  AdapterInit adapter_init = AdapterInit::paper_random;
  bool with_adapters = true;

  void validate() const;
  int64_t resolved_stem_channels() const;
  int64_t embedding_dim() const { return stage_channels.back(); }
  int64_t num_blocks() const;
  int64_t num_bn_layers() const;
  /// Canonical text of the adapter-independent architecture.
  std::string architecture_key() const;
  uint64_t digest() const;
};

enum class FreezeMode { adapters_only, bn_affine_only, full, none_trainable };

const char* to_string(FreezeMode mode) noexcept;
FreezeMode freeze_mode_from_string(const std::string& name);

struct FreezePolicy {
  FreezeMode mode = FreezeMode::adapters_only;
  bool heads_trainable = true;
};

struct RegistryEntry {
  std::string name;
  Shape shape;
  ParamKind kind;
  bool trainable;
};

class Model {
 public:
  Model(BackboneSpec spec, uint64_t seed);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const BackboneSpec& spec() const { return spec_; }
  int64_t embedding_dim() const { return spec_.embedding_dim(); }

  /// (N, 3, D, H, W) clips -> (N, embedding_dim) features.
  Tensor forward_features(const Tensor& clips, bool train);
  /// Propagates a feature gradient into the backbone parameters.
  void backward_features(const Tensor& grad_features);

  LinearLayer& add_head(const std::string& name, int64_t out_features, uint64_t seed, bool zero_init = false,
                        int64_t in_features = -1);
  LinearLayer& head(const std::string& name);
  bool has_head(const std::string& name) const { return heads_.count(name) != 0; }
  std::vector<std::string> head_names() const;

  /// Every parameter exactly once: backbone in layer order, then heads by name.
  std::vector<NamedParameter> parameters();
  std::vector<NamedBuffer> buffers();
  std::vector<RegistryEntry> registry();
  Parameter* find_parameter(const std::string& name);

  const std::vector<AdapterLayer*>& adapters() const { return adapters_; }
  const std::vector<BatchNormLayer*>& batch_norms() const { return batch_norms_; }

  void set_batch_statistics(bool enabled);
  void zero_grad();

  const FreezePolicy& freeze_policy() const { return policy_; }
  void set_freeze_policy(const FreezePolicy& policy) { policy_ = policy; }

 private:
  BackboneSpec spec_;
  std::unique_ptr<Sequential> backbone_;
  std::map<std::string, std::unique_ptr<LinearLayer>> heads_;
  std::vector<AdapterLayer*> adapters_;
  std::vector<BatchNormLayer*> batch_norms_;
  FreezePolicy policy_{FreezeMode::full, true};
};

Model build_backbone(const BackboneSpec& spec, uint64_t seed);

/// Sets every parameter's trainable flag from its kind.
Model& apply_freeze_policy(Model& model, const FreezePolicy& policy);

struct KindCounts {
  int64_t total = 0;
  int64_t trainable = 0;
};

struct TrainabilityReport {
  std::map<ParamKind, KindCounts> per_kind;
  int64_t total = 0;
  int64_t trainable = 0;
  double trainable_fraction = 0.0;
  int64_t trainable_bytes = 0;  // 4 bytes per element
  int64_t full_bytes = 0;
};

TrainabilityReport trainability_report(Model& model);

/// Inception-family configuration at full I3D scale
/// (nine inception modules, 1024-wide output).
BackboneSpec paper_scale_reference_spec();

}  // namespace pecop
