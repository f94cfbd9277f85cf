// SPDX-License-Identifier: Apache-2.0
#include "pecop/heads.hpp"

#include <cmath>
#include <numeric>

#include "pecop/losses.hpp"

namespace pecop {

void ScoreSupport::validate() const {
  if (!(min_score < max_score)) throw ConfigError("score support: min_score must be below max_score");
  if (num_bins < 2) throw ConfigError("score support: at least two bins are required");
}

std::vector<double> ScoreSupport::bin_centers() const {
  validate();
  std::vector<double> c(static_cast<size_t>(num_bins));
  for (int64_t i = 0; i < num_bins; ++i) c[i] = min_score + static_cast<double>(i) * bin_width();
  return c;
}

ScoreTarget gaussian_target(double score, const ScoreSupport& support, double sigma) {
  support.validate();
  if (!(sigma > 0.0)) throw ConfigError("gaussian target: sigma must be positive");
  if (!support.contains(score)) {
    throw DataError("score " + std::to_string(score) + " outside support [" + std::to_string(support.min_score) +
                    ", " + std::to_string(support.max_score) + "]");
  }
  const auto centers = support.bin_centers();
  // Work in log space so tiny sigma collapses onto the nearest bin instead of 0/0.
  std::vector<double> logits(centers.size());
  for (size_t i = 0; i < centers.size(); ++i) {
    const double d = centers[i] - score;
    logits[i] = -d * d / (2.0 * sigma * sigma);
  }
  return {softmax<double>(logits), score, sigma};
}

double kl_divergence(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) throw ShapeError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] > 0.0) kl += target[i] * (std::log(target[i]) - std::log(predicted[i]));
  }
  return kl;
}

namespace {

// KL(target || softmax(logits)) and its gradient (softmax - target).
double kl_from_logits(std::span<const double> logits, const ScoreTarget& target, std::vector<double>* pred,
                      std::vector<double>* grad) {
  if (logits.size() != target.probs.size()) {
    throw ShapeError("usdl: head has " + std::to_string(logits.size()) + " outputs, target has " +
                     std::to_string(target.probs.size()) + " bins");
  }
  const auto logq = log_softmax(logits);
  double kl = 0.0;
  for (size_t i = 0; i < logq.size(); ++i) {
    const double t = target.probs[i];
    if (t > 0.0) kl += t * (std::log(t) - logq[i]);
  }
  if (pred || grad) {
    std::vector<double> q(logq.size());
    for (size_t i = 0; i < q.size(); ++i) q[i] = std::exp(logq[i]);
    if (grad) {
      grad->resize(q.size());
      for (size_t i = 0; i < q.size(); ++i) (*grad)[i] = q[i] - target.probs[i];
    }
    if (pred) *pred = std::move(q);
  }
  return kl;
}

}  // namespace

template <typename T>
UsdlOutput usdl_forward_loss(const BasicTensor<T>& feature, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                             const ScoreTarget& target, UsdlGradients<T>* grads) {
  const auto F = static_cast<int64_t>(feature.size());
  if (weight.rank() != 2 || weight.dim(1) != F) {
    throw ShapeError("usdl: feature length " + std::to_string(F) + " incompatible with head " +
                     shape_string(weight.shape()));
  }
  const BasicTensor<T> row = feature.reshaped({1, F});
  const BasicTensor<T> logits_t = ops::linear_forward(row, weight, &bias);
  std::vector<double> logits(logits_t.storage().begin(), logits_t.storage().end());
  UsdlOutput out;
  std::vector<double> g;
  out.kl = kl_from_logits(logits, target, &out.pred_probs, grads ? &g : nullptr);
  if (grads) {
    BasicTensor<T> grad_logits({1, static_cast<int64_t>(g.size())});
    for (size_t i = 0; i < g.size(); ++i) grad_logits[i] = static_cast<T>(g[i]);
    if (grads->weight.shape() != weight.shape()) grads->weight = BasicTensor<T>(weight.shape());
    if (grads->bias.shape() != bias.shape()) grads->bias = BasicTensor<T>(bias.shape());
    BasicTensor<T> grad_row;
    ops::linear_backward(row, weight, grad_logits, &grad_row, &grads->weight, &grads->bias);
    grads->feature = grad_row.reshaped(feature.shape());
  }
  return out;
}

template UsdlOutput usdl_forward_loss(const BasicTensor<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                      const ScoreTarget&, UsdlGradients<float>*);
template UsdlOutput usdl_forward_loss(const BasicTensor<double>&, const BasicTensor<double>&,
                                      const BasicTensor<double>&, const ScoreTarget&, UsdlGradients<double>*);

UsdlBatch usdl_loss_batch(const Tensor& logits, const std::vector<ScoreTarget>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int64_t>(targets.size())) {
    throw ShapeError("usdl_loss_batch: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const int64_t N = logits.dim(0), B = logits.dim(1);
  UsdlBatch out;
  out.grad_logits = Tensor(logits.shape());
  std::vector<double> row(static_cast<size_t>(B)), pred, g;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t b = 0; b < B; ++b) row[b] = logits[n * B + b];
    out.kl += kl_from_logits(row, targets[n], &pred, &g);
    out.pred_probs.push_back(pred);
    for (int64_t b = 0; b < B; ++b) out.grad_logits[n * B + b] = static_cast<float>(g[b] / static_cast<double>(N));
  }
  out.kl /= static_cast<double>(N);
  return out;
}

double usdl_predict_score(std::span<const double> probs, const ScoreSupport& support) {
  if (static_cast<int64_t>(probs.size()) != support.num_bins) throw ShapeError("usdl_predict_score: bin count mismatch");
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("probabilities sum to " + std::to_string(sum) + ", expected 1");
  const auto centers = support.bin_centers();
  double expected = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) expected += probs[i] * centers[i];
  return std::clamp(expected, support.min_score, support.max_score);
}

Tensor pairwise_regressor_input(const Tensor& query_features, const Tensor& exemplar_features,
                                const std::vector<double>& exemplar_scores) {
  if (query_features.shape() != exemplar_features.shape() || query_features.rank() != 2) {
    throw ShapeError("pairwise: query " + shape_string(query_features.shape()) + " vs exemplar " +
                     shape_string(exemplar_features.shape()));
  }
  const int64_t N = query_features.dim(0), F = query_features.dim(1);
  if (static_cast<int64_t>(exemplar_scores.size()) != N) throw ShapeError("pairwise: exemplar score count mismatch");
  Tensor input({N, 2 * F + 1});
  for (int64_t n = 0; n < N; ++n) {
    float* row = input.ptr() + n * (2 * F + 1);
    std::copy_n(query_features.ptr() + n * F, F, row);
    std::copy_n(exemplar_features.ptr() + n * F, F, row + F);
    row[2 * F] = static_cast<float>(exemplar_scores[n]);
  }
  return input;
}

namespace {

double predict_difference(std::span<const float> query, std::span<const float> exemplar, double exemplar_score,
                          LinearLayer& regressor) {
  if (query.size() != exemplar.size()) throw ShapeError("pairwise: feature dimensions differ");
  const auto F = static_cast<int64_t>(query.size());
  if (regressor.in_features() != 2 * F + 1 || regressor.out_features() != 1) {
    throw ShapeError("pairwise: regressor expects " + std::to_string(regressor.in_features()) + " inputs, got " +
                     std::to_string(2 * F + 1));
  }
  const Tensor q({1, F}, std::vector<float>(query.begin(), query.end()));
  const Tensor e({1, F}, std::vector<float>(exemplar.begin(), exemplar.end()));
  const Tensor out = regressor.forward(pairwise_regressor_input(q, e, {exemplar_score}), false);
  return static_cast<double>(out[0]);
}

}  // namespace

double pairwise_relative_loss(std::span<const float> query_feature, std::span<const float> exemplar_feature,
                              double exemplar_score, double query_score, LinearLayer& regressor) {
  const double d = predict_difference(query_feature, exemplar_feature, exemplar_score, regressor);
  const double err = d - (query_score - exemplar_score);
  return err * err;
}

double pairwise_predict(std::span<const float> query_feature,
                        const std::vector<std::pair<std::vector<float>, double>>& exemplars, LinearLayer& regressor) {
  if (exemplars.empty()) throw DataError("pairwise_predict needs at least one exemplar");
  double sum = 0.0;
  for (const auto& [feature, score] : exemplars) {
    sum += score + predict_difference(query_feature, feature, score, regressor);
  }
  return sum / static_cast<double>(exemplars.size());
}

}  // namespace pecop
