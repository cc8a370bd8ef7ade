// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tcnf::metrics {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Throws DataError unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// ROC AUC against soft labels: a point with weight l counts l as positive
/// and 1 - l as negative at every threshold.
double continuous_auc(std::span<const double> scores, std::span<const double> weights);

/// Weight 1 inside labeled ranges, 1 - d/(w+1) at distance d <= w from the
/// nearest labeled step, 0 beyond; overlapping buffers take the max.
std::vector<double> range_labels(std::span<const std::uint8_t> labels, std::size_t w);

/// Mean over w = 0..max_window of the soft-label ROC AUC.
double vus_roc(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t max_window);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Predictions are score >= threshold.
PrecisionRecall precision_recall_f1(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                    double threshold);

/// Trapezoidal area under the precision-recall curve over unique thresholds,
/// starting from recall 0 at the first precision.
double auc_pr(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// 0.3·auc + 0.7·vus.
double combined_objective(double auc, double vus);

/// Median length of the labeled ranges (lower median); 0 without ranges.
std::size_t default_window(std::span<const std::uint8_t> labels);

}  // namespace tcnf::metrics
