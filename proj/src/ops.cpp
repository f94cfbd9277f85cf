// SPDX-License-Identifier: Apache-2.0
#include "pecop/ops.hpp"

#include <Eigen/Core>
#include <limits>

namespace pecop::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct Extents {
  int64_t n, c, d, h, w;
  int64_t spatial() const { return d * h * w; }
};

Extents extents5(const Shape& s, const char* what) {
  if (s.size() != 5) throw ShapeError(std::string(what) + ": expected a 5-axis tensor, got " + shape_string(s));
  return {s[0], s[1], s[2], s[3], s[4]};
}

struct Window {
  Triple kernel, stride, padding;
  Extents in;
  int64_t od, oh, ow;
  int64_t out_spatial() const { return od * oh * ow; }
};

// Expands one sample's channel slice into a (channels * kD*kH*kW, L) matrix.
template <typename T>
void im2col(const T* x, int64_t channels, const Window& win, T* col) {
  const int64_t L = win.out_spatial();
  const auto [kd, kh, kw] = win.kernel;
  const auto [sd, sh, sw] = win.stride;
  const auto [pd, ph, pw] = win.padding;
  const int64_t D = win.in.d, H = win.in.h, W = win.in.w;
  for (int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * D * H * W;
    for (int64_t a = 0; a < kd; ++a)
      for (int64_t b = 0; b < kh; ++b)
        for (int64_t e = 0; e < kw; ++e) {
          T* dst = col + (((c * kd + a) * kh + b) * kw + e) * L;
          for (int64_t z = 0; z < win.od; ++z) {
            const int64_t iz = z * sd - pd + a;
            T* row = dst + z * win.oh * win.ow;
            if (iz < 0 || iz >= D) {
              std::fill(row, row + win.oh * win.ow, T{0});
              continue;
            }
            for (int64_t y = 0; y < win.oh; ++y) {
              const int64_t iy = y * sh - ph + b;
              T* out = row + y * win.ow;
              if (iy < 0 || iy >= H) {
                std::fill(out, out + win.ow, T{0});
                continue;
              }
              const T* src = xc + (iz * H + iy) * W;
              for (int64_t q = 0; q < win.ow; ++q) {
                const int64_t ix = q * sw - pw + e;
                out[q] = (ix >= 0 && ix < W) ? src[ix] : T{0};
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t channels, const Window& win, T* x) {
  const int64_t L = win.out_spatial();
  const auto [kd, kh, kw] = win.kernel;
  const auto [sd, sh, sw] = win.stride;
  const auto [pd, ph, pw] = win.padding;
  const int64_t D = win.in.d, H = win.in.h, W = win.in.w;
  for (int64_t c = 0; c < channels; ++c) {
    T* xc = x + c * D * H * W;
    for (int64_t a = 0; a < kd; ++a)
      for (int64_t b = 0; b < kh; ++b)
        for (int64_t e = 0; e < kw; ++e) {
          const T* src = col + (((c * kd + a) * kh + b) * kw + e) * L;
          for (int64_t z = 0; z < win.od; ++z) {
            const int64_t iz = z * sd - pd + a;
            if (iz < 0 || iz >= D) continue;
            for (int64_t y = 0; y < win.oh; ++y) {
              const int64_t iy = y * sh - ph + b;
              if (iy < 0 || iy >= H) continue;
              const T* in = src + (z * win.oh + y) * win.ow;
              T* dst = xc + (iz * H + iy) * W;
              for (int64_t q = 0; q < win.ow; ++q) {
                const int64_t ix = q * sw - pw + e;
                if (ix >= 0 && ix < W) dst[ix] += in[q];
              }
            }
          }
        }
  }
}

struct ConvPlan {
  Extents in;
  int64_t c_out, groups, cin_g, cout_g, kvol;
  Window win;
  bool pointwise;  // 1x1x1, stride 1, no padding: the input slice is the column matrix
};

template <typename T>
ConvPlan plan_conv(const BasicTensor<T>& input, const BasicTensor<T>& weight, const ConvGeometry& g) {
  const Extents in = extents5(input.shape(), "conv3d input");
  if (weight.rank() != 5) throw ShapeError("conv3d weight must have 5 axes, got " + shape_string(weight.shape()));
  ConvPlan p{};
  p.in = in;
  p.groups = g.groups;
  p.c_out = weight.dim(0);
  if (g.groups < 1 || in.c % g.groups != 0 || p.c_out % g.groups != 0) {
    throw ShapeError("conv3d: channels not divisible by groups");
  }
  p.cin_g = in.c / g.groups;
  p.cout_g = p.c_out / g.groups;
  if (weight.dim(1) != p.cin_g) {
    throw ShapeError("conv3d: weight expects " + std::to_string(weight.dim(1)) + " input channels per group, input has " +
                     std::to_string(p.cin_g));
  }
  p.win.kernel = {weight.dim(2), weight.dim(3), weight.dim(4)};
  p.win.stride = g.stride;
  p.win.padding = g.padding;
  p.win.in = in;
  p.win.od = window_out_extent(in.d, p.win.kernel[0], g.stride[0], g.padding[0]);
  p.win.oh = window_out_extent(in.h, p.win.kernel[1], g.stride[1], g.padding[1]);
  p.win.ow = window_out_extent(in.w, p.win.kernel[2], g.stride[2], g.padding[2]);
  if (p.win.od <= 0 || p.win.oh <= 0 || p.win.ow <= 0) throw ShapeError("conv3d: kernel larger than padded input");
  p.kvol = p.win.kernel[0] * p.win.kernel[1] * p.win.kernel[2];
  p.pointwise = p.kvol == 1 && g.stride == Triple{1, 1, 1} && g.padding == Triple{0, 0, 0};
  return p;
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const ConvGeometry& geometry) {
  const ConvPlan p = plan_conv(input, weight, geometry);
  const int64_t L = p.win.out_spatial();
  const int64_t K = p.cin_g * p.kvol;
  BasicTensor<T> out({p.in.n, p.c_out, p.win.od, p.win.oh, p.win.ow});
  std::vector<T> col(p.pointwise ? 0 : static_cast<size_t>(K * L));
  const int64_t in_stride = p.in.c * p.in.spatial();
  for (int64_t n = 0; n < p.in.n; ++n) {
    for (int64_t g = 0; g < p.groups; ++g) {
      const T* x = input.ptr() + n * in_stride + g * p.cin_g * p.in.spatial();
      const T* colp = x;
      if (!p.pointwise) {
        im2col(x, p.cin_g, p.win, col.data());
        colp = col.data();
      }
      ConstMatMap<T> w(weight.ptr() + g * p.cout_g * K, p.cout_g, K);
      ConstMatMap<T> c(colp, K, L);
      MatMap<T> y(out.ptr() + (n * p.c_out + g * p.cout_g) * L, p.cout_g, L);
      y.noalias() = w * c;
    }
  }
  return out;
}

template <typename T>
void conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_output,
                     const ConvGeometry& geometry, BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight) {
  const ConvPlan p = plan_conv(input, weight, geometry);
  const int64_t L = p.win.out_spatial();
  const int64_t K = p.cin_g * p.kvol;
  const Shape expected{p.in.n, p.c_out, p.win.od, p.win.oh, p.win.ow};
  if (grad_output.shape() != expected) {
    throw ShapeError("conv3d_backward: grad_output " + shape_string(grad_output.shape()) + " expected " +
                     shape_string(expected));
  }
  if (grad_weight && grad_weight->shape() != weight.shape()) throw ShapeError("conv3d_backward: grad_weight shape");
  if (grad_input) *grad_input = BasicTensor<T>(input.shape());
  std::vector<T> col(p.pointwise ? 0 : static_cast<size_t>(K * L));
  std::vector<T> dcol(p.pointwise ? 0 : static_cast<size_t>(K * L));
  const int64_t in_stride = p.in.c * p.in.spatial();
  for (int64_t n = 0; n < p.in.n; ++n) {
    for (int64_t g = 0; g < p.groups; ++g) {
      const int64_t offset = n * in_stride + g * p.cin_g * p.in.spatial();
      ConstMatMap<T> dy(grad_output.ptr() + (n * p.c_out + g * p.cout_g) * L, p.cout_g, L);
      if (grad_weight) {
        const T* colp = input.ptr() + offset;
        if (!p.pointwise) {
          im2col(input.ptr() + offset, p.cin_g, p.win, col.data());
          colp = col.data();
        }
        ConstMatMap<T> c(colp, K, L);
        MatMap<T> dw(grad_weight->ptr() + g * p.cout_g * K, p.cout_g, K);
        dw.noalias() += dy * c.transpose();
      }
      if (grad_input) {
        ConstMatMap<T> w(weight.ptr() + g * p.cout_g * K, p.cout_g, K);
        if (p.pointwise) {
          MatMap<T> dx(grad_input->ptr() + offset, K, L);
          dx.noalias() = w.transpose() * dy;
        } else {
          MatMap<T> dc(dcol.data(), K, L);
          dc.noalias() = w.transpose() * dy;
          col2im_add(dcol.data(), p.cin_g, p.win, grad_input->ptr() + offset);
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> max_pool3d_forward(const BasicTensor<T>& input, const PoolGeometry& geometry,
                                  std::vector<int64_t>* argmax) {
  const Extents in = extents5(input.shape(), "max_pool3d input");
  const auto [kd, kh, kw] = geometry.kernel;
  const auto [sd, sh, sw] = geometry.stride;
  const auto [pd, ph, pw] = geometry.padding;
  const int64_t od = window_out_extent(in.d, kd, sd, pd);
  const int64_t oh = window_out_extent(in.h, kh, sh, ph);
  const int64_t ow = window_out_extent(in.w, kw, sw, pw);
  if (od <= 0 || oh <= 0 || ow <= 0) throw ShapeError("max_pool3d: window larger than padded input");
  BasicTensor<T> out({in.n, in.c, od, oh, ow});
  if (argmax) argmax->assign(out.size(), -1);
  int64_t o = 0;
  for (int64_t nc = 0; nc < in.n * in.c; ++nc) {
    const int64_t base = nc * in.spatial();
    for (int64_t z = 0; z < od; ++z)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_at = -1;
          for (int64_t a = 0; a < kd; ++a) {
            const int64_t iz = z * sd - pd + a;
            if (iz < 0 || iz >= in.d) continue;
            for (int64_t b = 0; b < kh; ++b) {
              const int64_t iy = y * sh - ph + b;
              if (iy < 0 || iy >= in.h) continue;
              for (int64_t e = 0; e < kw; ++e) {
                const int64_t ix = x * sw - pw + e;
                if (ix < 0 || ix >= in.w) continue;
                const int64_t at = base + (iz * in.h + iy) * in.w + ix;
                if (best_at < 0 || input[at] > best) {
                  best = input[at];
                  best_at = at;
                }
              }
            }
          }
          out[o] = best;
          if (argmax) (*argmax)[o] = best_at;
        }
  }
  return out;
}

template <typename T>
BasicTensor<T> max_pool3d_backward(const BasicTensor<T>& grad_output, const Shape& input_shape,
                                   const std::vector<int64_t>& argmax) {
  if (argmax.size() != grad_output.size()) throw ShapeError("max_pool3d_backward: argmax size mismatch");
  BasicTensor<T> grad(input_shape);
  for (size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& input) {
  const Extents in = extents5(input.shape(), "global_avg_pool input");
  BasicTensor<T> out({in.n, in.c});
  const int64_t S = in.spatial();
  for (int64_t i = 0; i < in.n * in.c; ++i) {
    const T* p = input.ptr() + i * S;
    T acc = 0;
    for (int64_t s = 0; s < S; ++s) acc += p[s];
    out[i] = acc / static_cast<T>(S);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_output, const Shape& input_shape) {
  const Extents in = extents5(input_shape, "global_avg_pool_backward");
  if (grad_output.shape() != Shape{in.n, in.c}) throw ShapeError("global_avg_pool_backward: grad shape");
  BasicTensor<T> grad(input_shape);
  const int64_t S = in.spatial();
  for (int64_t i = 0; i < in.n * in.c; ++i) {
    const T v = grad_output[i] / static_cast<T>(S);
    std::fill(grad.ptr() + i * S, grad.ptr() + (i + 1) * S, v);
  }
  return grad;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& output) {
  if (grad_output.shape() != output.shape()) throw ShapeError("relu_backward: shape mismatch");
  BasicTensor<T> grad = grad_output;
  for (size_t i = 0; i < grad.size(); ++i)
    if (!(output[i] > T{0})) grad[i] = T{0};
  return grad;
}

namespace {

template <typename T>
void check_bn_params(const Extents& in, const BasicTensor<T>& gamma, const BasicTensor<T>& beta) {
  if (gamma.size() != static_cast<size_t>(in.c) || beta.size() != static_cast<size_t>(in.c)) {
    throw ShapeError("batch_norm: affine parameters must have one entry per channel");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batch_norm_forward_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                        const BasicTensor<T>& beta, T eps, BatchNormCache<T>* cache,
                                        std::vector<T>* batch_mean, std::vector<T>* batch_var) {
  const Extents in = extents5(input.shape(), "batch_norm input");
  check_bn_params(in, gamma, beta);
  const int64_t S = in.spatial();
  const T count = static_cast<T>(in.n * S);
  std::vector<T> mean(in.c, T{0}), var(in.c, T{0}), inv_std(in.c);
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const T* p = input.ptr() + (n * in.c + c) * S;
      T acc = 0;
      for (int64_t s = 0; s < S; ++s) acc += p[s];
      mean[c] += acc;
    }
  for (auto& m : mean) m /= count;
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const T* p = input.ptr() + (n * in.c + c) * S;
      T acc = 0;
      for (int64_t s = 0; s < S; ++s) acc += (p[s] - mean[c]) * (p[s] - mean[c]);
      var[c] += acc;
    }
  for (auto& v : var) v /= count;
  for (int64_t c = 0; c < in.c; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + eps);

  BasicTensor<T> out(input.shape());
  BasicTensor<T> normalized(input.shape());
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const int64_t off = (n * in.c + c) * S;
      for (int64_t s = 0; s < S; ++s) {
        const T xh = (input[off + s] - mean[c]) * inv_std[c];
        normalized[off + s] = xh;
        out[off + s] = gamma[c] * xh + beta[c];
      }
    }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
    cache->batch_statistics = true;
  }
  if (batch_mean) *batch_mean = std::move(mean);
  if (batch_var) *batch_var = std::move(var);
  return out;
}

template <typename T>
BasicTensor<T> batch_norm_forward_eval(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                       const BasicTensor<T>& running_var, T eps, BatchNormCache<T>* cache) {
  const Extents in = extents5(input.shape(), "batch_norm input");
  check_bn_params(in, gamma, beta);
  const int64_t S = in.spatial();
  std::vector<T> inv_std(in.c);
  for (int64_t c = 0; c < in.c; ++c) inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
  BasicTensor<T> out(input.shape());
  BasicTensor<T> normalized;
  if (cache) normalized = BasicTensor<T>(input.shape());
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const int64_t off = (n * in.c + c) * S;
      for (int64_t s = 0; s < S; ++s) {
        const T xh = (input[off + s] - running_mean[c]) * inv_std[c];
        if (cache) normalized[off + s] = xh;
        out[off + s] = gamma[c] * xh + beta[c];
      }
    }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->batch_statistics = false;
  }
  return out;
}

template <typename T>
void batch_norm_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& gamma, const BatchNormCache<T>& cache,
                         BasicTensor<T>* grad_input, BasicTensor<T>* grad_gamma, BasicTensor<T>* grad_beta) {
  const Extents in = extents5(grad_output.shape(), "batch_norm_backward");
  if (cache.normalized.shape() != grad_output.shape()) throw ShapeError("batch_norm_backward: stale cache");
  const int64_t S = in.spatial();
  std::vector<T> sum_dy(in.c, T{0}), sum_dy_xh(in.c, T{0});
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const int64_t off = (n * in.c + c) * S;
      T a = 0, b = 0;
      for (int64_t s = 0; s < S; ++s) {
        a += grad_output[off + s];
        b += grad_output[off + s] * cache.normalized[off + s];
      }
      sum_dy[c] += a;
      sum_dy_xh[c] += b;
    }
  if (grad_gamma)
    for (int64_t c = 0; c < in.c; ++c) (*grad_gamma)[c] += sum_dy_xh[c];
  if (grad_beta)
    for (int64_t c = 0; c < in.c; ++c) (*grad_beta)[c] += sum_dy[c];
  if (!grad_input) return;
  *grad_input = BasicTensor<T>(grad_output.shape());
  const T count = static_cast<T>(in.n * S);
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t c = 0; c < in.c; ++c) {
      const int64_t off = (n * in.c + c) * S;
      const T scale = gamma[c] * cache.inv_std[c];
      if (cache.batch_statistics) {
        const T mdy = sum_dy[c] / count;
        const T mdyx = sum_dy_xh[c] / count;
        for (int64_t s = 0; s < S; ++s)
          (*grad_input)[off + s] = scale * (grad_output[off + s] - mdy - cache.normalized[off + s] * mdyx);
      } else {
        for (int64_t s = 0; s < S; ++s) (*grad_input)[off + s] = scale * grad_output[off + s];
      }
    }
}

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_string(input.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const int64_t N = input.dim(0), F = input.dim(1), O = weight.dim(0);
  BasicTensor<T> out({N, O});
  ConstMatMap<T> x(input.ptr(), N, F);
  ConstMatMap<T> w(weight.ptr(), O, F);
  MatMap<T> y(out.ptr(), N, O);
  y.noalias() = x * w.transpose();
  if (bias && !bias->empty()) {
    if (bias->size() != static_cast<size_t>(O)) throw ShapeError("linear: bias length mismatch");
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < O; ++o) out[n * O + o] += (*bias)[o];
  }
  return out;
}

template <typename T>
void linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_output,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias) {
  const int64_t N = input.dim(0), F = input.dim(1), O = weight.dim(0);
  if (grad_output.shape() != Shape{N, O}) throw ShapeError("linear_backward: grad_output shape");
  ConstMatMap<T> dy(grad_output.ptr(), N, O);
  if (grad_weight) {
    MatMap<T> dw(grad_weight->ptr(), O, F);
    ConstMatMap<T> x(input.ptr(), N, F);
    dw.noalias() += dy.transpose() * x;
  }
  if (grad_bias && !grad_bias->empty()) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < O; ++o) (*grad_bias)[o] += grad_output[n * O + o];
  }
  if (grad_input) {
    *grad_input = BasicTensor<T>({N, F});
    ConstMatMap<T> w(weight.ptr(), O, F);
    MatMap<T> dx(grad_input->ptr(), N, F);
    dx.noalias() = dy * w;
  }
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape shape = parts.front()->shape();
  if (shape.size() < 2) throw ShapeError("concat_channels: rank < 2");
  int64_t total = 0;
  for (const auto* p : parts) {
    Shape s = p->shape();
    if (s.size() != shape.size() || s[0] != shape[0]) throw ShapeError("concat_channels: batch mismatch");
    for (size_t i = 2; i < s.size(); ++i)
      if (s[i] != shape[i]) throw ShapeError("concat_channels: extent mismatch");
    total += s[1];
  }
  shape[1] = total;
  BasicTensor<T> out(shape);
  const int64_t N = shape[0];
  const int64_t inner = shape_numel(shape) / (N * total);
  for (int64_t n = 0; n < N; ++n) {
    T* dst = out.ptr() + n * total * inner;
    for (const auto* p : parts) {
      const int64_t block = p->dim(1) * inner;
      std::copy_n(p->ptr() + n * block, block, dst);
      dst += block;
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& whole, const std::vector<int64_t>& channels) {
  const Shape& shape = whole.shape();
  int64_t total = 0;
  for (auto c : channels) total += c;
  if (shape.size() < 2 || total != shape[1]) throw ShapeError("split_channels: channel sum mismatch");
  const int64_t N = shape[0];
  const int64_t inner = shape_numel(shape) / (N * total);
  std::vector<BasicTensor<T>> parts;
  for (auto c : channels) {
    Shape s = shape;
    s[1] = c;
    parts.emplace_back(s);
  }
  for (int64_t n = 0; n < N; ++n) {
    const T* src = whole.ptr() + n * total * inner;
    for (size_t i = 0; i < channels.size(); ++i) {
      const int64_t block = channels[i] * inner;
      std::copy_n(src, block, parts[i].ptr() + n * block);
      src += block;
    }
  }
  return parts;
}

template <typename T>
BasicTensor<T> concat_batch(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape shape = parts.front()->shape();
  int64_t total = 0;
  for (const auto* p : parts) {
    if (p->rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1)) {
      throw ShapeError("concat_batch: extent mismatch");
    }
    total += p->dim(0);
  }
  shape[0] = total;
  std::vector<T> values;
  values.reserve(static_cast<size_t>(shape_numel(shape)));
  for (const auto* p : parts) values.insert(values.end(), p->storage().begin(), p->storage().end());
  return BasicTensor<T>(shape, std::move(values));
}

template <typename T>
void add_inplace(BasicTensor<T>& target, const BasicTensor<T>& source) {
  if (target.shape() != source.shape()) {
    throw ShapeError("add: " + shape_string(target.shape()) + " vs " + shape_string(source.shape()));
  }
  for (size_t i = 0; i < target.size(); ++i) target[i] += source[i];
}

#define PECOP_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> conv3d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const ConvGeometry&);      \
  template void conv3d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,              \
                                const ConvGeometry&, BasicTensor<T>*, BasicTensor<T>*);                           \
  template BasicTensor<T> max_pool3d_forward(const BasicTensor<T>&, const PoolGeometry&, std::vector<int64_t>*);  \
  template BasicTensor<T> max_pool3d_backward(const BasicTensor<T>&, const Shape&, const std::vector<int64_t>&);  \
  template BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>&);                                         \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);                          \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> batch_norm_forward_train(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                                   const BasicTensor<T>&, T, BatchNormCache<T>*, std::vector<T>*, \
                                                   std::vector<T>*);                                              \
  template BasicTensor<T> batch_norm_forward_eval(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                  const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                  const BasicTensor<T>&, T, BatchNormCache<T>*);                  \
  template void batch_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BatchNormCache<T>&,       \
                                    BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);                           \
  template BasicTensor<T> linear_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*);    \
  template void linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,              \
                                BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);                               \
  template BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>&);                             \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, const std::vector<int64_t>&);        \
  template BasicTensor<T> concat_batch(const std::vector<const BasicTensor<T>*>&);                                \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);

PECOP_INSTANTIATE_OPS(float)
PECOP_INSTANTIATE_OPS(double)

#undef PECOP_INSTANTIATE_OPS

}  // namespace pecop::ops
