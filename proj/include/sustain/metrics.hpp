#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sustain/tensor.hpp"

namespace sustain {

/// Ranking quality for one class column. Stable descending order with
/// original-index tie-break; the precision at each positive's rank is averaged
/// over the positives. No positives makes the metric undefined.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& truth);

/// Mann-Whitney AUC, P(pos > neg) + half the tie mass, via midranks.
/// Undefined when either side is empty.
std::optional<double> auc_roc(const std::vector<double>& scores,
                              const std::vector<int>& truth);

/// Label-weighted label-ranking average precision over a [N,C] score matrix
/// against binary truth. Every positive label carries weight 1 / (total
/// positives in the whole matrix). Undefined for an all-zero truth matrix.
std::optional<double> lwlrap(const Tensor& scores, const Tensor& truth);

/// Fraction of samples where thresholding the score reproduces the truth bit,
/// per class. Scores at the threshold count as positive predictions.
std::vector<double> per_class_accuracy(const Tensor& scores, const Tensor& truth,
                                       double threshold = 0.5);

struct MetricsReport {
  std::vector<std::optional<double>> ap;
  std::vector<std::optional<double>> auc;
  std::vector<double> accuracy;
  std::vector<std::size_t> excluded;  // classes with no positives
  std::optional<double> map;
  std::optional<double> mauc;
  std::optional<double> lw;
};

/// Full per-class and aggregate report for one score/truth split.
MetricsReport evaluate_scores(const Tensor& scores, const Tensor& truth,
                              double threshold = 0.5);

std::string metrics_csv(const MetricsReport& r);
std::string metrics_json(const MetricsReport& r);

}  // namespace sustain
