// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/data.hpp"
#include "tcnf/flow.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tcnf::score {

/// Log-likelihood, latent point and summed inverse log-determinant for a set
/// of targets, in the order given.
struct PointEval {
  std::vector<std::size_t> targets;
  std::vector<double> log_prob;
  std::vector<double> logdet;
  diff::Tensor latent;  // [n, D]
};

/// Evaluates `targets` (0-based, increasing) in inference mode. Stateless
/// encoders use left-padded contexts; the stateful encoder walks each
/// contiguous run of targets after warming up on the k rows before it.
PointEval evaluate_points(const flow::FlowModel& model, const data::Dataset& series,
                          std::span<const std::size_t> targets);

struct ScoreSeries {
  std::vector<double> scores;  // negative log-likelihood, higher is more anomalous
  std::optional<data::Labels> labels;
  std::string model_id;
  std::string dataset_id;
};

/// Scores every timestep of a normalized, even-width test series.
ScoreSeries score_series(const flow::FlowModel& model, const data::Dataset& series);

void write_scores_csv(const ScoreSeries& s, const std::filesystem::path& path);
ScoreSeries read_scores_csv(const std::filesystem::path& path);

/// Columns t,u1..uD,logdet,score[,label].
void export_latent(const flow::FlowModel& model, const data::Dataset& series, const std::filesystem::path& path);

/// Scores against labels as a simple line chart.
void write_scores_svg(const ScoreSeries& s, const std::filesystem::path& path);

enum class ThresholdPolicy { Quantile, BestF1 };

/// Quantile policy: the q-quantile of the scores (linear interpolation).
/// Best-F1: the unique score value maximizing F1 of (score >= threshold).
double select_threshold(std::span<const double> scores, const std::optional<data::Labels>& labels,
                        ThresholdPolicy policy, double q = 0.99);

}  // namespace tcnf::score
