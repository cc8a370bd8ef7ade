// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/data.hpp"
#include "tcnf/flow.hpp"
#include "tcnf/hyperopt.hpp"
#include "tcnf/score.hpp"
#include "tcnf/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tcnf::config {

/// Everything a run needs, loaded from an INI file and then overridden by
/// command-line flags. Sections: run, flow, conditioner, encoder, train,
/// search, metrics, generate.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  flow::ModelConfig model = flow::default_config(flow::Method::TcnfBase);
  train::TrainConfig train;

  hpo::Objective objective = hpo::Objective::Labeled;
  std::size_t budget = 60;
  std::size_t population = 0;  // 0: default for the space size
  double sigma0 = 0.3;
  std::size_t lookback_max = 50;
  std::size_t candidate_epochs = 15;

  std::size_t metric_window = 0;  // 0: median labeled-range length
  score::ThresholdPolicy threshold = score::ThresholdPolicy::BestF1;
  double quantile = 0.99;

  data::GeneratorConfig generator;
  std::vector<data::AnomalyKind> anomalies{data::AnomalyKind::Spike};
  std::size_t anomaly_count = 3;
  std::size_t anomaly_length = 20;
  double anomaly_magnitude = 4.0;

  /// Sets the method and the matching encoder kind.
  void set_method(flow::Method m);
  /// Checks every section.
  void validate() const;
};

/// Unknown sections or keys and unparsable values throw ConfigError naming
/// the key.
RunConfig load_config(const std::filesystem::path& path);
/// Applies one `section.key = value` setting.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// All keys with their current values, in file order.
std::vector<std::pair<std::string, std::string>> resolved_values(const RunConfig& cfg);
/// Writes every key, so the file alone reproduces the run.
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace tcnf::config
