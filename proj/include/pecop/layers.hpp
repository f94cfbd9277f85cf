// SPDX-License-Identifier: Apache-2.0
#pragma once

// Layer graph with explicit forward/backward. Each layer caches what its
// backward pass needs during a forward call made with train=true; backward
// must follow the matching forward.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pecop/adapter3d.hpp"
#include "pecop/ops.hpp"
#include "pecop/tensor.hpp"

namespace pecop {

enum class ParamKind { backbone, bn_affine, adapter, head };

const char* to_string(ParamKind kind) noexcept;

struct Parameter {
  Parameter() = default;
  Parameter(Shape shape, ParamKind k) : value(shape), grad(shape), kind(k) {}

  Tensor value;
  Tensor grad;
  ParamKind kind = ParamKind::backbone;
  bool trainable = true;

  void zero_grad() { grad.fill(0.0f); }
  /// Gradient slot to accumulate into, or null when frozen.
  Tensor* grad_slot() { return trainable ? &grad : nullptr; }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* buffer;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& input, bool train) = 0;
  /// Returns dL/dinput, or an empty tensor when need_input_grad is false.
  virtual Tensor backward(const Tensor& grad_output, bool need_input_grad) = 0;

  virtual void collect(const std::string& prefix, std::vector<NamedParameter>& params,
                       std::vector<NamedBuffer>& buffers) {
    (void)prefix;
    (void)params;
    (void)buffers;
  }
  virtual bool any_trainable() const { return false; }
  /// Toggles batch-statistics normalization in every BatchNorm below this layer.
  virtual void set_batch_statistics(bool enabled) { (void)enabled; }
  /// Pre-order walk over this layer and every nested layer.
  virtual void visit(const std::function<void(Layer&)>& fn) { fn(*this); }
};

class Conv3dLayer : public Layer {
 public:
  Conv3dLayer(int64_t in_channels, int64_t out_channels, ops::Triple kernel, ops::Triple stride, ops::Triple padding,
              uint64_t seed);

  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override;
  bool any_trainable() const override { return weight_.trainable; }

  Parameter& weight() { return weight_; }

 private:
  Parameter weight_;
  ops::ConvGeometry geometry_;
  Tensor input_;
};

class BatchNormLayer : public Layer {
 public:
  explicit BatchNormLayer(int64_t channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override;
  bool any_trainable() const override { return gamma_.trainable || beta_.trainable; }
  void set_batch_statistics(bool enabled) override { batch_statistics_ = enabled; }

  int64_t channels() const { return static_cast<int64_t>(gamma_.value.size()); }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  float momentum_;
  float eps_;
  bool batch_statistics_ = false;
  ops::BatchNormCache<float> cache_;
};

class ReluLayer : public Layer {
 public:
  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;

 private:
  Tensor output_;
};

class MaxPoolLayer : public Layer {
 public:
  explicit MaxPoolLayer(ops::PoolGeometry geometry) : geometry_(geometry) {}
  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;

 private:
  ops::PoolGeometry geometry_;
  Shape input_shape_;
  std::vector<int64_t> argmax_;
};

/// (N, C, D, H, W) -> (N, C)
class GlobalAvgPoolLayer : public Layer {
 public:
  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;

 private:
  Shape input_shape_;
};

class AdapterLayer : public Layer {
 public:
  AdapterLayer(const AdapterConfig& config, uint64_t seed);

  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override;
  bool any_trainable() const override { return down_.trainable || up_.trainable || alpha_.trainable; }

  const AdapterConfig& config() const { return config_; }
  Parameter& theta_down() { return down_; }
  Parameter& theta_up() { return up_; }
  Parameter& alpha() { return alpha_; }
  /// Copy of the current weights as a standalone adapter.
  Adapter3D snapshot() const { return {config_, down_.value, up_.value, alpha_.value}; }

 private:
  AdapterConfig config_;
  Parameter down_;
  Parameter up_;
  Parameter alpha_;
  AdapterTrace<float> trace_;
};

/// Affine map on (N, F) features.
class LinearLayer : public Layer {
 public:
  LinearLayer(int64_t in_features, int64_t out_features, ParamKind kind, uint64_t seed, bool zero_init = false);

  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override;
  bool any_trainable() const override { return weight_.trainable || bias_.trainable; }

  int64_t in_features() const { return weight_.value.dim(1); }
  int64_t out_features() const { return weight_.value.dim(0); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class Sequential : public Layer {
 public:
  Layer& add(std::string name, std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    return static_cast<L&>(add(std::move(name), std::make_unique<L>(std::forward<Args>(args)...)));
  }

  Tensor forward(const Tensor& input, bool train) override;
  Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& params,
               std::vector<NamedBuffer>& buffers) override;
  bool any_trainable() const override;
  void set_batch_statistics(bool enabled) override;
  void visit(const std::function<void(Layer&)>& fn) override;

  size_t size() const { return children_.size(); }
  Layer& child(size_t i) { return *children_[i].second; }
  const std::string& child_name(size_t i) const { return children_[i].first; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> children_;
};

/// Conv3d -> BatchNorm -> ReLU
std::unique_ptr<Sequential> make_conv_unit(int64_t in_channels, int64_t out_channels, ops::Triple kernel,
                                           ops::Triple stride, ops::Triple padding, uint64_t seed);

}  // namespace pecop
