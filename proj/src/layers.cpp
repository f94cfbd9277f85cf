// SPDX-License-Identifier: Apache-2.0
#include "pecop/layers.hpp"

#include <cmath>

#include "pecop/random.hpp"

namespace pecop {

const char* to_string(ParamKind kind) noexcept {
  switch (kind) {
    case ParamKind::backbone: return "backbone";
    case ParamKind::bn_affine: return "bn_affine";
    case ParamKind::adapter: return "adapter";
    case ParamKind::head: return "head";
  }
  return "?";
}

namespace {

void fill_uniform(Tensor& t, double bound, uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<float>(dist(rng));
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

Conv3dLayer::Conv3dLayer(int64_t in_channels, int64_t out_channels, ops::Triple kernel, ops::Triple stride,
                         ops::Triple padding, uint64_t seed)
    : weight_({out_channels, in_channels, kernel[0], kernel[1], kernel[2]}, ParamKind::backbone),
      geometry_{1, stride, padding} {
  const double fan_in = static_cast<double>(in_channels * kernel[0] * kernel[1] * kernel[2]);
  fill_uniform(weight_.value, std::sqrt(6.0 / fan_in), seed);
}

Tensor Conv3dLayer::forward(const Tensor& input, bool train) {
  if (train) input_ = input;
  return ops::conv3d_forward(input, weight_.value, geometry_);
}

Tensor Conv3dLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  Tensor grad_input;
  ops::conv3d_backward(input_, weight_.value, grad_output, geometry_, need_input_grad ? &grad_input : nullptr,
                       weight_.grad_slot());
  return grad_input;
}

void Conv3dLayer::collect(const std::string& prefix, std::vector<NamedParameter>& params, std::vector<NamedBuffer>&) {
  params.push_back({join(prefix, "weight"), &weight_});
}

BatchNormLayer::BatchNormLayer(int64_t channels, float momentum, float eps)
    : gamma_({channels}, ParamKind::bn_affine),
      beta_({channels}, ParamKind::bn_affine),
      running_mean_({channels}, 0.0f),
      running_var_({channels}, 1.0f),
      momentum_(momentum),
      eps_(eps) {
  gamma_.value.fill(1.0f);
}

Tensor BatchNormLayer::forward(const Tensor& input, bool train) {
  if (!(train && batch_statistics_)) {
    return ops::batch_norm_forward_eval(input, gamma_.value, beta_.value, running_mean_, running_var_, eps_,
                                        train ? &cache_ : nullptr);
  }
  std::vector<float> mean, var;
  Tensor out = ops::batch_norm_forward_train(input, gamma_.value, beta_.value, eps_, &cache_, &mean, &var);
  const double count = static_cast<double>(input.size() / input.dim(1));
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  for (int64_t c = 0; c < channels(); ++c) {
    running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * mean[c];
    running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * static_cast<float>(var[c] * unbias);
  }
  return out;
}

Tensor BatchNormLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  Tensor grad_input;
  ops::batch_norm_backward(grad_output, gamma_.value, cache_, need_input_grad ? &grad_input : nullptr,
                           gamma_.grad_slot(), beta_.grad_slot());
  return grad_input;
}

void BatchNormLayer::collect(const std::string& prefix, std::vector<NamedParameter>& params,
                             std::vector<NamedBuffer>& buffers) {
  params.push_back({join(prefix, "weight"), &gamma_});
  params.push_back({join(prefix, "bias"), &beta_});
  buffers.push_back({join(prefix, "running_mean"), &running_mean_});
  buffers.push_back({join(prefix, "running_var"), &running_var_});
}

Tensor ReluLayer::forward(const Tensor& input, bool train) {
  Tensor out = ops::relu_forward(input);
  if (train) output_ = out;
  return out;
}

Tensor ReluLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  if (!need_input_grad) return {};
  return ops::relu_backward(grad_output, output_);
}

Tensor MaxPoolLayer::forward(const Tensor& input, bool train) {
  if (!train) return ops::max_pool3d_forward(input, geometry_, nullptr);
  input_shape_ = input.shape();
  return ops::max_pool3d_forward(input, geometry_, &argmax_);
}

Tensor MaxPoolLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  if (!need_input_grad) return {};
  return ops::max_pool3d_backward(grad_output, input_shape_, argmax_);
}

Tensor GlobalAvgPoolLayer::forward(const Tensor& input, bool train) {
  if (train) input_shape_ = input.shape();
  return ops::global_avg_pool_forward(input);
}

Tensor GlobalAvgPoolLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  if (!need_input_grad) return {};
  return ops::global_avg_pool_backward(grad_output, input_shape_);
}

AdapterLayer::AdapterLayer(const AdapterConfig& config, uint64_t seed) : config_(config) {
  Adapter3D built = build_adapter<float>(config, seed);
  down_ = Parameter(config.down_shape(), ParamKind::adapter);
  up_ = Parameter(config.up_shape(), ParamKind::adapter);
  alpha_ = Parameter(config.alpha_shape(), ParamKind::adapter);
  down_.value = std::move(built.theta_down);
  up_.value = std::move(built.theta_up);
  alpha_.value = std::move(built.alpha);
}

Tensor AdapterLayer::forward(const Tensor& input, bool train) {
  return adapter_forward(config_, down_.value, up_.value, alpha_.value, input, train ? &trace_ : nullptr);
}

Tensor AdapterLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  return adapter_backward(config_, down_.value, up_.value, alpha_.value, trace_, grad_output, down_.grad_slot(),
                          up_.grad_slot(), alpha_.grad_slot(), need_input_grad);
}

void AdapterLayer::collect(const std::string& prefix, std::vector<NamedParameter>& params, std::vector<NamedBuffer>&) {
  params.push_back({join(prefix, "theta_down"), &down_});
  params.push_back({join(prefix, "theta_up"), &up_});
  params.push_back({join(prefix, "alpha"), &alpha_});
}

LinearLayer::LinearLayer(int64_t in_features, int64_t out_features, ParamKind kind, uint64_t seed, bool zero_init)
    : weight_({out_features, in_features}, kind), bias_({out_features}, kind) {
  if (!zero_init) fill_uniform(weight_.value, 1.0 / std::sqrt(static_cast<double>(in_features)), seed);
}

Tensor LinearLayer::forward(const Tensor& input, bool train) {
  if (train) input_ = input;
  return ops::linear_forward(input, weight_.value, &bias_.value);
}

Tensor LinearLayer::backward(const Tensor& grad_output, bool need_input_grad) {
  Tensor grad_input;
  ops::linear_backward(input_, weight_.value, grad_output, need_input_grad ? &grad_input : nullptr,
                       weight_.grad_slot(), bias_.grad_slot());
  return grad_input;
}

void LinearLayer::collect(const std::string& prefix, std::vector<NamedParameter>& params, std::vector<NamedBuffer>&) {
  params.push_back({join(prefix, "weight"), &weight_});
  params.push_back({join(prefix, "bias"), &bias_});
}

Layer& Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  children_.emplace_back(std::move(name), std::move(layer));
  return *children_.back().second;
}

Tensor Sequential::forward(const Tensor& input, bool train) {
  Tensor x = input;
  for (auto& [name, layer] : children_) x = layer->forward(x, train);
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output, bool need_input_grad) {
  // upstream_trainable[i]: some child before i owns a trainable parameter
  std::vector<bool> upstream_trainable(children_.size() + 1, false);
  for (size_t i = 0; i < children_.size(); ++i) {
    upstream_trainable[i + 1] = upstream_trainable[i] || children_[i].second->any_trainable();
  }
  Tensor g = grad_output;
  for (size_t i = children_.size(); i-- > 0;) {
    const bool need = need_input_grad || upstream_trainable[i];
    if (!need && !children_[i].second->any_trainable()) return {};
    g = children_[i].second->backward(g, need);
    if (!need) return {};
  }
  return g;
}

void Sequential::collect(const std::string& prefix, std::vector<NamedParameter>& params,
                         std::vector<NamedBuffer>& buffers) {
  for (auto& [name, layer] : children_) layer->collect(join(prefix, name), params, buffers);
}

bool Sequential::any_trainable() const {
  for (const auto& [name, layer] : children_)
    if (layer->any_trainable()) return true;
  return false;
}

void Sequential::set_batch_statistics(bool enabled) {
  for (auto& [name, layer] : children_) layer->set_batch_statistics(enabled);
}

void Sequential::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (auto& [name, layer] : children_) layer->visit(fn);
}

std::unique_ptr<Sequential> make_conv_unit(int64_t in_channels, int64_t out_channels, ops::Triple kernel,
                                           ops::Triple stride, ops::Triple padding, uint64_t seed) {
  auto unit = std::make_unique<Sequential>();
  unit->emplace<Conv3dLayer>("conv", in_channels, out_channels, kernel, stride, padding, seed);
  unit->emplace<BatchNormLayer>("bn", out_channels);
  unit->emplace<ReluLayer>("relu");
  return unit;
}

}  // namespace pecop
