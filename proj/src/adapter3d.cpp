// SPDX-License-Identifier: Apache-2.0
#include "pecop/adapter3d.hpp"

#include <cmath>
#include <string>

#include "pecop/ops.hpp"
#include "pecop/random.hpp"

namespace pecop {

const char* to_string(AdapterInit mode) noexcept {
  switch (mode) {
    case AdapterInit::paper_random: return "paper_random";
    case AdapterInit::identity: return "identity";
  }
  return "?";
}

AdapterInit adapter_init_from_string(const std::string& name) {
  if (name == "paper_random") return AdapterInit::paper_random;
  if (name == "identity") return AdapterInit::identity;
  throw ConfigError("unknown adapter init mode: " + name);
}

void AdapterConfig::validate() const {
  if (c_in <= 0 || c_out <= 0) throw ConfigError("adapter: channel counts must be positive");
  if (lambda_compress <= 0) throw ConfigError("adapter: compression factor must be positive");
  if (kernel <= 0 || kernel % 2 == 0) {
    throw ConfigError("adapter: kernel must be a positive odd integer, got " + std::to_string(kernel));
  }
  if (c_in % lambda_compress != 0) {
    throw ConfigError("adapter: c_in (" + std::to_string(c_in) + ") not divisible by lambda (" +
                      std::to_string(lambda_compress) + ")");
  }
  if (c_in != c_out) {
    throw ConfigError("adapter: c_in (" + std::to_string(c_in) + ") must equal c_out (" + std::to_string(c_out) +
                      ") for the residual skip");
  }
}

int64_t count_adapter_params(const AdapterConfig& config) {
  config.validate();
  const int64_t k3 = config.kernel * config.kernel * config.kernel;
  return config.c_in * k3 + config.c_out * config.bottleneck_channels() + config.c_out;
}

template <typename T>
BasicAdapter3D<T> build_adapter(const AdapterConfig& config, uint64_t seed) {
  config.validate();
  BasicAdapter3D<T> a;
  a.config = config;
  a.theta_down = BasicTensor<T>(config.down_shape());
  a.theta_up = BasicTensor<T>(config.up_shape());
  a.alpha = BasicTensor<T>(config.alpha_shape(), T{1});

  Rng rng(mix_seed(seed, "adapter"));
  auto fill_uniform = [&rng](BasicTensor<T>& t, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  };
  const int64_t k3 = config.kernel * config.kernel * config.kernel;
  fill_uniform(a.theta_down, config.lambda_compress * k3);
  if (config.init_mode == AdapterInit::paper_random) fill_uniform(a.theta_up, config.bottleneck_channels());
  return a;
}

namespace {

ops::ConvGeometry down_geometry(const AdapterConfig& c) {
  const int64_t pad = (c.kernel - 1) / 2;
  return {c.bottleneck_channels(), {1, 1, 1}, {pad, pad, pad}};
}

const ops::ConvGeometry kPointwise{};

}  // namespace

template <typename T>
BasicTensor<T> adapter_forward(const AdapterConfig& config, const BasicTensor<T>& theta_down,
                               const BasicTensor<T>& theta_up, const BasicTensor<T>& alpha,
                               const BasicTensor<T>& h_in, AdapterTrace<T>* trace) {
  if (h_in.rank() != 5 || h_in.dim(1) != config.c_in) {
    throw ShapeError("adapter expects (N, " + std::to_string(config.c_in) + ", D, H, W), got " +
                     shape_string(h_in.shape()));
  }
  if (!h_in.all_finite()) throw NumericError("adapter input contains non-finite values");
  BasicTensor<T> hidden = ops::relu_forward(ops::conv3d_forward(h_in, theta_down, down_geometry(config)));
  BasicTensor<T> projected = ops::conv3d_forward(hidden, theta_up, kPointwise);
  BasicTensor<T> out = h_in;
  const int64_t N = out.dim(0), C = out.dim(1);
  const int64_t S = static_cast<int64_t>(out.size()) / (N * C);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const int64_t off = (n * C + c) * S;
      const T a = alpha[c];
      for (int64_t s = 0; s < S; ++s) out[off + s] += a * projected[off + s];
    }
  if (trace) {
    trace->input = h_in;
    trace->hidden = std::move(hidden);
    trace->projected = std::move(projected);
  }
  return out;
}

template <typename T>
BasicTensor<T> adapter_backward(const AdapterConfig& config, const BasicTensor<T>& theta_down,
                                const BasicTensor<T>& theta_up, const BasicTensor<T>& alpha,
                                const AdapterTrace<T>& trace, const BasicTensor<T>& grad_output,
                                BasicTensor<T>* grad_down, BasicTensor<T>* grad_up, BasicTensor<T>* grad_alpha,
                                bool need_input_grad) {
  if (grad_output.shape() != trace.projected.shape()) throw ShapeError("adapter_backward: gradient shape mismatch");
  const int64_t N = grad_output.dim(0), C = grad_output.dim(1);
  const int64_t S = static_cast<int64_t>(grad_output.size()) / (N * C);

  if (grad_alpha) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t off = (n * C + c) * S;
        T acc = 0;
        for (int64_t s = 0; s < S; ++s) acc += grad_output[off + s] * trace.projected[off + s];
        (*grad_alpha)[c] += acc;
      }
  }
  if (!grad_down && !grad_up && !need_input_grad) return {};

  BasicTensor<T> grad_projected(grad_output.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const int64_t off = (n * C + c) * S;
      for (int64_t s = 0; s < S; ++s) grad_projected[off + s] = alpha[c] * grad_output[off + s];
    }

  const bool need_hidden = grad_down || need_input_grad;
  BasicTensor<T> grad_hidden;
  ops::conv3d_backward(trace.hidden, theta_up, grad_projected, kPointwise, need_hidden ? &grad_hidden : nullptr,
                       grad_up);
  if (!need_hidden) return {};
  BasicTensor<T> grad_pre = ops::relu_backward(grad_hidden, trace.hidden);
  BasicTensor<T> grad_input;
  ops::conv3d_backward(trace.input, theta_down, grad_pre, down_geometry(config),
                       need_input_grad ? &grad_input : nullptr, grad_down);
  if (!need_input_grad) return {};
  ops::add_inplace(grad_input, grad_output);
  return grad_input;
}

#define PECOP_INSTANTIATE_ADAPTER(T)                                                                           \
  template BasicAdapter3D<T> build_adapter<T>(const AdapterConfig&, uint64_t);                                 \
  template BasicTensor<T> adapter_forward(const AdapterConfig&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                          const BasicTensor<T>&, const BasicTensor<T>&, AdapterTrace<T>*);     \
  template BasicTensor<T> adapter_backward(const AdapterConfig&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                           const BasicTensor<T>&, const AdapterTrace<T>&,                      \
                                           const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,            \
                                           BasicTensor<T>*, bool);

PECOP_INSTANTIATE_ADAPTER(float)
PECOP_INSTANTIATE_ADAPTER(double)

#undef PECOP_INSTANTIATE_ADAPTER

}  // namespace pecop
