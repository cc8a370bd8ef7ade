// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/cmaes.hpp"
#include "tcnf/data.hpp"
#include "tcnf/flow.hpp"
#include "tcnf/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tcnf::hpo {

enum class ParamKind { Integer, Real };

struct ParamSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  ParamKind kind = ParamKind::Real;
};

struct SearchSpace {
  std::vector<ParamSpec> params;

  /// Throws ConfigError unless every lower < upper and names are unique.
  void validate() const;
  std::size_t size() const noexcept { return params.size(); }
};

/// Searched hyperparameters of `method`. `lookback_max` is the upper end of
/// the look-back range (50 for short synthetic series, 100 otherwise).
SearchSpace search_space(flow::Method method, std::size_t lookback_max = 50);

using Assignment = std::vector<std::pair<std::string, double>>;

/// Affine map of [0,1]^n onto the box; integers round half up, then every
/// value is clipped into its bounds.
Assignment decode(std::span<const double> unit, const SearchSpace& space);

/// Writes an assignment into a model configuration. Unknown names throw.
flow::ModelConfig apply_assignment(const Assignment& a, flow::ModelConfig cfg);

enum class Objective { Labeled, ValidationLoss };

std::string to_string(Objective o);
Objective objective_from_string(std::string_view name);

struct SearchConfig {
  flow::ModelConfig base;           // method and every value not searched
  Objective objective = Objective::Labeled;
  std::size_t budget = 60;          // candidate evaluations
  std::optional<std::size_t> population;
  double sigma0 = 0.3;
  std::size_t lookback_max = 50;
  std::size_t metric_window = 0;    // 0: median labeled-range length
  train::TrainConfig candidate_train;
  train::TrainConfig final_train;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct Trial {
  std::size_t index = 0;
  std::size_t generation = 0;
  Assignment params;
  double fitness = 0.0;   // NaN when training failed
  double auc = 0.0;       // NaN for the validation-loss objective
  double vus = 0.0;
  double val_loss = 0.0;
  std::string error;
};

struct SearchResult {
  std::vector<Trial> trials;  // evaluation order
  std::size_t best_trial = 0;
  flow::ModelConfig best_config;
  flow::FlowModel best_model;
  train::TrainReport best_report;
};

/// Labeled objective: fitness = -(0.3·AUC + 0.7·VUS) of the trained
/// candidate on `eval_series`. Validation objective: best validation NLL.
/// Candidates of one generation are trained on `workers` threads; results do
/// not depend on the worker count. The winner is refit with `final_train`.
SearchResult run_search(const data::Dataset& train_series, const std::optional<data::Dataset>& eval_series,
                        const SearchConfig& cfg);

/// Fitness of a trained model against a labeled series.
struct LabeledScore {
  double auc = 0.0;
  double vus = 0.0;
  double fitness = 0.0;
};
LabeledScore labeled_fitness(const flow::FlowModel& model, const data::Dataset& eval_series, std::size_t window);

/// Columns generation,trial,rank,<param names>,fitness,auc,vus,val_loss,error.
void write_trials_csv(const std::vector<Trial>& trials, const std::filesystem::path& path);

/// Per-candidate seed derived from the run seed and the trial index.
std::uint64_t trial_seed(std::uint64_t seed, std::size_t index);

/// Worker count from TCNF_WORKERS, defaulting to 1.
std::size_t workers_from_env();

}  // namespace tcnf::hpo
