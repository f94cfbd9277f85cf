// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "pecop/error.hpp"

namespace pecop {

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const T m = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T z = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("log_softmax of an empty vector");
  const T m = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (auto v : logits) z += std::exp(v - m);
  const T lse = m + std::log(z);
  std::vector<T> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// -log softmax(logits)[label]; grad (if non-null) receives softmax - onehot.
template <typename T>
T cross_entropy(std::span<const T> logits, int64_t label, std::vector<T>* grad = nullptr) {
  if (label < 0 || label >= static_cast<int64_t>(logits.size())) {
    throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const auto logp = log_softmax(logits);
  if (grad) {
    grad->resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logp[i]);
    (*grad)[static_cast<size_t>(label)] -= T{1};
  }
  return -logp[static_cast<size_t>(label)];
}

}  // namespace pecop
