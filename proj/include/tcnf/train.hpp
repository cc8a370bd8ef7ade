// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/data.hpp"
#include "tcnf/flow.hpp"

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace tcnf::train {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 10;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  /// Empty means the default for the method (sequential tail for the
  /// stateful encoder, random sections otherwise).
  std::optional<data::SplitMode> split_mode;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double wall_seconds = 0.0;
};

/// Columns epoch,train_loss,val_loss,best. Wall time is left out so the file
/// is a pure function of the inputs.
void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

/// Adam with bias correction over every trainable parameter of a store.
class Adam {
 public:
  Adam(diff::ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  /// Scales gradients to global norm `clip_norm` when larger (0 disables),
  /// then updates. A non-finite gradient throws NumericError naming the
  /// parameter.
  void step(double clip_norm = 0.0);
  std::size_t steps() const noexcept { return t_; }

 private:
  diff::ParameterStore* store_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<diff::Tensor> m_;
  std::vector<diff::Tensor> v_;
};

double global_grad_norm(const diff::ParameterStore& store);

/// Split used for `method` on a series of `steps` rows.
data::Split make_split(std::size_t steps, const flow::ModelConfig& model_cfg, const TrainConfig& cfg);

/// Training targets of a split: training indices with a full history.
std::vector<std::size_t> training_targets(const data::Split& split, std::size_t lookback);
std::vector<std::size_t> validation_targets(const data::Split& split, std::size_t lookback);

/// Normalizes with the series' own statistics, then pads to an even width.
/// The statistics are kept on the result.
data::Dataset prepare_training_series(const data::Dataset& raw);
/// Applies stored statistics and the same padding to a test series.
data::Dataset prepare_test_series(const data::Dataset& raw, const data::NormStats& stats);

/// Minimizes mean NLL on the training part of `series` (already normalized and
/// even-width) and returns the parameters of the best validation epoch.
std::pair<flow::FlowModel, TrainReport> train_model(const data::Dataset& series, const flow::ModelConfig& model_cfg,
                                                     const TrainConfig& cfg);

/// Mean NLL over the given targets, dropout off.
double mean_nll(const flow::FlowModel& model, const data::Dataset& series, const std::vector<std::size_t>& targets);

}  // namespace tcnf::train
