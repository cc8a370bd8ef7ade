// SPDX-License-Identifier: Apache-2.0
#include "tcnf/metrics.hpp"

#include "tcnf/data.hpp"
#include "tcnf/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace tcnf::metrics {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("scores and labels differ in length: " + std::to_string(a) + " vs " + std::to_string(b));
}

/// Indices ordered by descending score; ties keep index order.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_sizes(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1..j share their average
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m) {
      if (labels[order[m]]) {
        rank_sum += avg;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw DataError("AUC needs both positive and negative labels");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double continuous_auc(std::span<const double> scores, std::span<const double> weights) {
  check_sizes(scores.size(), weights.size());
  double total_pos = 0.0, total_neg = 0.0;
  for (double w : weights) {
    total_pos += w;
    total_neg += 1.0 - w;
  }
  if (total_pos <= 0.0 || total_neg <= 0.0) throw DataError("AUC needs both positive and negative weight");
  const auto order = descending(scores);
  double tp = 0.0, fp = 0.0, area = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += weights[order[j]];
      fp += 1.0 - weights[order[j]];
      ++j;
    }
    const double tpr = tp / total_pos;
    const double fpr = fp / total_neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

std::vector<double> range_labels(std::span<const std::uint8_t> labels, std::size_t w) {
  const std::size_t n = labels.size();
  constexpr std::size_t far = std::numeric_limits<std::size_t>::max() / 2;
  std::vector<std::size_t> dist(n, far);
  std::size_t last = far;
  for (std::size_t t = 0; t < n; ++t) {
    last = labels[t] ? 0 : (last == far ? far : last + 1);
    dist[t] = last;
  }
  last = far;
  for (std::size_t t = n; t-- > 0;) {
    last = labels[t] ? 0 : (last == far ? far : last + 1);
    dist[t] = std::min(dist[t], last);
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    if (dist[t] == 0) out[t] = 1.0;
    else if (dist[t] <= w) out[t] = 1.0 - static_cast<double>(dist[t]) / static_cast<double>(w + 1);
  }
  return out;
}

double vus_roc(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t max_window) {
  check_sizes(scores.size(), labels.size());
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t w = 0; w <= max_window; ++w) {
    const auto weights = range_labels(labels, w);
    double neg = 0.0;
    for (double v : weights) neg += 1.0 - v;
    if (w > 0 && neg <= 0.0) continue;  // buffers cover everything; no negatives left
    total += w == 0 ? auc_roc(scores, labels) : continuous_auc(scores, weights);
    ++used;
  }
  return total / static_cast<double>(used);
}

PrecisionRecall precision_recall_f1(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                    double threshold) {
  check_sizes(scores.size(), labels.size());
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
  }
  PrecisionRecall r;
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double auc_pr(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_sizes(scores.size(), labels.size());
  const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw DataError("AUC-PR needs positive labels");
  const auto order = descending(scores);
  double tp = 0.0, fp = 0.0, area = 0.0, prev_recall = 0.0, prev_precision = -1.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    if (prev_precision < 0.0) prev_precision = precision;
    area += (recall - prev_recall) * (precision + prev_precision) * 0.5;
    prev_recall = recall;
    prev_precision = precision;
    i = j;
  }
  return area;
}

double combined_objective(double auc, double vus) { return 0.3 * auc + 0.7 * vus; }

std::size_t default_window(std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> lengths;
  for (auto [b, e] : data::label_ranges(labels)) lengths.push_back(e - b);
  if (lengths.empty()) return 0;
  std::sort(lengths.begin(), lengths.end());
  return lengths[(lengths.size() - 1) / 2];
}

}  // namespace tcnf::metrics
