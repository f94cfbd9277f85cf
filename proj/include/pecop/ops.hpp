// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward and backward kernels for 5-D video activations (N, C, D, H, W).
// Templated on the scalar so gradient checks can run in double precision;
// explicit instantiations exist for float and double.

#include <array>
#include <vector>

#include "pecop/tensor.hpp"

namespace pecop::ops {

using Triple = std::array<int64_t, 3>;

struct ConvGeometry {
  int64_t groups = 1;
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

/// Output extent of a strided window along one axis.
inline int64_t window_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Grouped 3-D convolution without bias. Weight layout is
/// (C_out, C_in / groups, kD, kH, kW); each group maps C_in/groups input
/// channels onto C_out/groups output channels.
template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              const ConvGeometry& geometry);

/// Accumulates into *grad_weight (must be pre-shaped like weight) and
/// overwrites *grad_input. Either pointer may be null to skip that term.
template <typename T>
void conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& grad_output, const ConvGeometry& geometry,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight);

struct PoolGeometry {
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

/// Max pooling; padded positions never win. argmax receives flat input
/// offsets for the backward pass.
template <typename T>
BasicTensor<T> max_pool3d_forward(const BasicTensor<T>& input, const PoolGeometry& geometry,
                                  std::vector<int64_t>* argmax);

template <typename T>
BasicTensor<T> max_pool3d_backward(const BasicTensor<T>& grad_output, const Shape& input_shape,
                                   const std::vector<int64_t>& argmax);

/// (N, C, D, H, W) -> (N, C)
template <typename T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_output, const Shape& input_shape);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

/// Gradient gated by output > 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& output);

template <typename T>
struct BatchNormCache {
  BasicTensor<T> normalized;   // x_hat
  std::vector<T> inv_std;      // per channel
  bool batch_statistics = false;
};

/// Normalizes with the statistics of the current batch. batch_mean and
/// batch_var (biased) receive the per-channel moments.
template <typename T>
BasicTensor<T> batch_norm_forward_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                        const BasicTensor<T>& beta, T eps, BatchNormCache<T>* cache,
                                        std::vector<T>* batch_mean, std::vector<T>* batch_var);

template <typename T>
BasicTensor<T> batch_norm_forward_eval(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                       const BasicTensor<T>& running_var, T eps, BatchNormCache<T>* cache);

/// grad_gamma / grad_beta accumulate; grad_input is overwritten. Null skips.
template <typename T>
void batch_norm_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& gamma,
                         const BatchNormCache<T>& cache, BasicTensor<T>* grad_input,
                         BasicTensor<T>* grad_gamma, BasicTensor<T>* grad_beta);

/// y = x W^T + b with x (N, F), W (O, F), b (O) or empty.
template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias);

template <typename T>
void linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& grad_output, BasicTensor<T>* grad_input,
                     BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias);

/// Concatenate along axis 1.
template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts);

/// Inverse of concat_channels for gradients.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& whole, const std::vector<int64_t>& channels);

/// Concatenate along axis 0.
template <typename T>
BasicTensor<T> concat_batch(const std::vector<const BasicTensor<T>*>& parts);

template <typename T>
void add_inplace(BasicTensor<T>& target, const BasicTensor<T>& source);

}  // namespace pecop::ops
