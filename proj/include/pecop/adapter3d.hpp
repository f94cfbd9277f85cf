// SPDX-License-Identifier: Apache-2.0
#pragma once

// 3D-Adapter bottleneck:
//   h_out = alpha (.) (theta_up (x) f(theta_down (x)_dw h_in)) + h_in
// theta_down is a grouped conv with C_in/lambda groups of lambda input
// channels each (one output channel per group), theta_up a pointwise conv
// back to C_out, alpha a per-channel scale. No biases.

#include <cstdint>

#include "pecop/tensor.hpp"

namespace pecop {

enum class Nonlinearity { relu };

enum class AdapterInit {
  paper_random,  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on both projections
  identity,      // theta_up = 0, so the adapter starts as the identity map
};

const char* to_string(AdapterInit mode) noexcept;
AdapterInit adapter_init_from_string(const std::string& name);

struct AdapterConfig {
  int64_t c_in = 0;
  int64_t c_out = 0;
  int64_t lambda_compress = 4;
  int64_t kernel = 3;
  Nonlinearity nonlinearity = Nonlinearity::relu;
  AdapterInit init_mode = AdapterInit::paper_random;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  int64_t bottleneck_channels() const { return c_in / lambda_compress; }
  Shape down_shape() const { return {bottleneck_channels(), lambda_compress, kernel, kernel, kernel}; }
  Shape up_shape() const { return {c_out, bottleneck_channels(), 1, 1, 1}; }
  Shape alpha_shape() const { return {c_out}; }
};

template <typename T>
struct BasicAdapter3D {
  AdapterConfig config;
  BasicTensor<T> theta_down;
  BasicTensor<T> theta_up;
  BasicTensor<T> alpha;
};

using Adapter3D = BasicAdapter3D<float>;

/// Intermediate values kept for the backward pass.
template <typename T>
struct AdapterTrace {
  BasicTensor<T> input;
  BasicTensor<T> hidden;     // after the nonlinearity
  BasicTensor<T> projected;  // theta_up applied, before alpha
};

template <typename T>
struct AdapterGradients {
  BasicTensor<T> theta_down;
  BasicTensor<T> theta_up;
  BasicTensor<T> alpha;
};

/// C_in*K^3 + C_out*(C_in/lambda) + C_out
int64_t count_adapter_params(const AdapterConfig& config);

template <typename T>
BasicAdapter3D<T> build_adapter(const AdapterConfig& config, uint64_t seed);

/// Component form used by the model layer, which owns its tensors directly.
template <typename T>
BasicTensor<T> adapter_forward(const AdapterConfig& config, const BasicTensor<T>& theta_down,
                               const BasicTensor<T>& theta_up, const BasicTensor<T>& alpha,
                               const BasicTensor<T>& h_in, AdapterTrace<T>* trace);

/// Accumulates parameter gradients into the non-null members of `grads`
/// and returns dL/dh_in (empty tensor when need_input_grad is false).
template <typename T>
BasicTensor<T> adapter_backward(const AdapterConfig& config, const BasicTensor<T>& theta_down,
                                const BasicTensor<T>& theta_up, const BasicTensor<T>& alpha,
                                const AdapterTrace<T>& trace, const BasicTensor<T>& grad_output,
                                BasicTensor<T>* grad_down, BasicTensor<T>* grad_up, BasicTensor<T>* grad_alpha,
                                bool need_input_grad);

template <typename T>
BasicTensor<T> apply_adapter(const BasicAdapter3D<T>& adapter, const BasicTensor<T>& h_in,
                             AdapterTrace<T>* trace = nullptr) {
  return adapter_forward(adapter.config, adapter.theta_down, adapter.theta_up, adapter.alpha, h_in, trace);
}

/// Full gradient set for a given upstream gradient.
template <typename T>
BasicTensor<T> apply_adapter_backward(const BasicAdapter3D<T>& adapter, const AdapterTrace<T>& trace,
                                      const BasicTensor<T>& grad_output, AdapterGradients<T>& grads) {
  grads.theta_down = BasicTensor<T>(adapter.theta_down.shape());
  grads.theta_up = BasicTensor<T>(adapter.theta_up.shape());
  grads.alpha = BasicTensor<T>(adapter.alpha.shape());
  return adapter_backward(adapter.config, adapter.theta_down, adapter.theta_up, adapter.alpha, trace, grad_output,
                          &grads.theta_down, &grads.theta_up, &grads.alpha, true);
}

}  // namespace pecop
