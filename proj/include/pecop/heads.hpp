// SPDX-License-Identifier: Apache-2.0
#pragma once

// Supervised quality-assessment heads.
//
// Score-distribution head: softmax over score bins trained with
// KL(target || predicted) against a discretized Gaussian centred on the
// ground-truth score; decoded by the expectation over bin centres.
//
// Pairwise relative head: a linear regressor on
// [query feature, exemplar feature, exemplar score] predicts the score
// difference query - exemplar; inference averages exemplar score plus
// predicted difference over several exemplars.

#include <span>
#include <utility>
#include <vector>

#include "pecop/layers.hpp"

namespace pecop {

struct ScoreSupport {
  double min_score = 0.0;
  double max_score = 4.0;
  int64_t num_bins = 5;

  void validate() const;
  std::vector<double> bin_centers() const;
  double bin_width() const { return (max_score - min_score) / static_cast<double>(num_bins - 1); }
  bool contains(double score) const { return score >= min_score && score <= max_score; }

  /// Integer severities 0..4.
  static ScoreSupport severity_0_to_4() { return {0.0, 4.0, 5}; }
};

struct ScoreTarget {
  std::vector<double> probs;
  double source_score = 0.0;
  double sigma = 1.0;
};

ScoreTarget gaussian_target(double score, const ScoreSupport& support, double sigma);

/// sum_i p_i (ln p_i - ln q_i) with 0 ln 0 = 0.
double kl_divergence(std::span<const double> target, std::span<const double> predicted);

struct UsdlOutput {
  std::vector<double> pred_probs;
  double kl = 0.0;
};

template <typename T>
struct UsdlGradients {
  BasicTensor<T> weight;   // accumulated
  BasicTensor<T> bias;     // accumulated
  BasicTensor<T> feature;  // overwritten, shape of the feature
};

/// Single-sample head evaluation: feature (F), weight (B, F), bias (B).
template <typename T>
UsdlOutput usdl_forward_loss(const BasicTensor<T>& feature, const BasicTensor<T>& weight,
                             const BasicTensor<T>& bias, const ScoreTarget& target,
                             UsdlGradients<T>* grads = nullptr);

inline UsdlOutput usdl_forward_loss(const Tensor& feature, LinearLayer& head, const ScoreTarget& target) {
  return usdl_forward_loss(feature, head.weight().value, head.bias().value, target);
}

struct UsdlBatch {
  double kl = 0.0;  // mean over rows
  std::vector<std::vector<double>> pred_probs;
  Tensor grad_logits;  // d mean_kl / d logits
};

UsdlBatch usdl_loss_batch(const Tensor& logits, const std::vector<ScoreTarget>& targets);

/// Expectation over bin centres; throws DataError for unnormalized input.
double usdl_predict_score(std::span<const double> probs, const ScoreSupport& support);

/// Row layout fed to the pairwise regressor: [query (F), exemplar (F), exemplar score].
Tensor pairwise_regressor_input(const Tensor& query_features, const Tensor& exemplar_features,
                                const std::vector<double>& exemplar_scores);

double pairwise_relative_loss(std::span<const float> query_feature, std::span<const float> exemplar_feature,
                              double exemplar_score, double query_score, LinearLayer& regressor);

/// Mean over exemplars of (exemplar score + predicted difference).
double pairwise_predict(std::span<const float> query_feature,
                        const std::vector<std::pair<std::vector<float>, double>>& exemplars, LinearLayer& regressor);

}  // namespace pecop
