// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations written independently of the library kernels.
// They favour obviousness over speed and only run on tiny tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pecop/tensor.hpp"

namespace oracle {

using pecop::BasicTensor;
using pecop::Shape;

/// Direct 3D convolution: input (N, C, D, H, W), weight (O, C/groups, KD, KH, KW).
inline BasicTensor<double> conv3d(const BasicTensor<double>& x, const BasicTensor<double>& w, int64_t groups,
                                  int64_t stride, int64_t pad) {
  const int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t O = w.dim(0), Cg = w.dim(1), KD = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  const int64_t Og = O / groups;
  const int64_t OD = (D + 2 * pad - KD) / stride + 1;
  const int64_t OH = (H + 2 * pad - KH) / stride + 1;
  const int64_t OW = (W + 2 * pad - KW) / stride + 1;
  BasicTensor<double> y({N, O, OD, OH, OW});
  auto xi = [&](int64_t n, int64_t c, int64_t d, int64_t h, int64_t ww) {
    return x[(((n * C + c) * D + d) * H + h) * W + ww];
  };
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o) {
      const int64_t g = o / Og;
      for (int64_t od = 0; od < OD; ++od)
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            double acc = 0.0;
            for (int64_t ci = 0; ci < Cg; ++ci)
              for (int64_t kd = 0; kd < KD; ++kd)
                for (int64_t kh = 0; kh < KH; ++kh)
                  for (int64_t kw = 0; kw < KW; ++kw) {
                    const int64_t d = od * stride - pad + kd;
                    const int64_t h = oh * stride - pad + kh;
                    const int64_t ww = ow * stride - pad + kw;
                    if (d < 0 || d >= D || h < 0 || h >= H || ww < 0 || ww >= W) continue;
                    acc += xi(n, g * Cg + ci, d, h, ww) *
                           w[(((o * Cg + ci) * KD + kd) * KH + kh) * KW + kw];
                  }
            y[(((n * O + o) * OD + od) * OH + oh) * OW + ow] = acc;
          }
    }
  return y;
}

/// h_out = alpha * up(relu(down(h_in))) + h_in, spelled out loop by loop.
inline BasicTensor<double> adapter(const BasicTensor<double>& h, const BasicTensor<double>& down,
                                   const BasicTensor<double>& up, const BasicTensor<double>& alpha) {
  const int64_t bottleneck = down.dim(0);
  const int64_t K = down.dim(2);
  BasicTensor<double> mid = conv3d(h, down, bottleneck, 1, (K - 1) / 2);
  for (auto& v : mid.storage()) v = std::max(v, 0.0);
  BasicTensor<double> proj = conv3d(mid, up, 1, 1, 0);
  const int64_t N = h.dim(0), C = h.dim(1);
  const int64_t S = static_cast<int64_t>(h.size()) / (N * C);
  BasicTensor<double> out = h;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t s = 0; s < S; ++s) out[(n * C + c) * S + s] += alpha[c] * proj[(n * C + c) * S + s];
  return out;
}

/// Central-difference gradient of a scalar function with respect to `param`.
inline BasicTensor<double> numeric_gradient(BasicTensor<double>& param, const std::function<double()>& loss,
                                            double step = 1e-4) {
  BasicTensor<double> g(param.shape());
  for (size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + step;
    const double up = loss();
    param[i] = keep - step;
    const double down = loss();
    param[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// max |a - b| / max(1e-8, max(|a|, |b|)) over the whole tensor.
inline double relative_error(const BasicTensor<double>& a, const BasicTensor<double>& b) {
  double num = 0.0, den = 1e-8;
  for (size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return num / den;
}

/// Rank by counting: (#smaller) + (#equal + 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double u : v) {
      if (u < v[i]) less += 1.0;
      if (u == v[i]) equal += 1.0;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

/// Recovers (segment index, speed index) from clip provenance: the only
/// steps that differ from the base stride belong to the resampled segment.
struct RecoveredLabels {
  int64_t segment_index = -1;
  int64_t speed_label = -1;
  bool consistent = true;
};

inline RecoveredLabels recover_vspp_labels(const std::vector<int64_t>& ids, int64_t segment_len,
                                           const std::vector<int64_t>& speed_classes) {
  RecoveredLabels out;
  for (size_t k = 1; k < ids.size(); ++k) {
    const int64_t step = ids[k] - ids[k - 1];
    if (step == speed_classes.front()) continue;
    const int64_t seg = static_cast<int64_t>(k) / segment_len;
    const auto it = std::find(speed_classes.begin(), speed_classes.end(), step);
    const int64_t label = it == speed_classes.end() ? -2 : it - speed_classes.begin();
    if (out.segment_index >= 0 && (out.segment_index != seg || out.speed_label != label)) out.consistent = false;
    out.segment_index = seg;
    out.speed_label = label;
  }
  return out;
}

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

}  // namespace oracle
