// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tcnf::data {

using Labels = std::vector<std::uint8_t>;

/// Per-channel affine map fitted on training data.
///
/// A channel that is all zero in training is replaced by the constant 0.5 and
/// passed through with unit slope afterwards; any other constant channel is
/// centred on zero with unit slope. Both maps stay invertible.
struct ChannelStats {
  double min = 0.0;
  double max = 0.0;
  bool zero_replaced = false;

  double apply(double v) const;
  double invert(double v) const;
};

struct NormStats {
  std::vector<ChannelStats> channels;
};

enum class AnomalyKind { Spike, Platform, MeanShift, Amplitude, Pattern, Variance, Trend, Cutoff };

std::string to_string(AnomalyKind kind);
AnomalyKind anomaly_kind_from_string(std::string_view name);

/// One injected anomaly. `start` is a 1-based timestep; the range is
/// [start, start + length - 1].
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::Spike;
  std::size_t start = 1;
  std::size_t length = 1;
  double magnitude = 1.0;
  std::vector<std::size_t> channels;  // 0-based; empty means all channels
};

/// T×D series, row-major, indexed from 0 in code.
struct Dataset {
  std::size_t steps = 0;
  std::size_t dims = 0;
  std::vector<double> values;
  std::optional<Labels> labels;
  std::vector<std::string> channel_names;
  std::optional<NormStats> norm_stats;
  std::string provenance;
  std::vector<AnomalySpec> anomalies;

  Dataset() = default;
  Dataset(std::size_t t, std::size_t d);

  double& at(std::size_t t, std::size_t c) { return values[t * dims + c]; }
  double at(std::size_t t, std::size_t c) const { return values[t * dims + c]; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * dims, dims}; }
  std::vector<double> channel(std::size_t c) const;

  /// Throws DataError if sizes are inconsistent.
  void validate() const;
};

Dataset load_csv(const std::filesystem::path& path, bool has_labels);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

NormStats fit_minmax(const Dataset& train);
Dataset apply_norm(const Dataset& ds, const NormStats& stats);
Dataset invert_norm(const Dataset& ds, const NormStats& stats);
/// Fits on `ds` itself and stores the statistics in the result.
Dataset normalize_minmax(const Dataset& ds);
/// Appends one constant 0.5 channel when D is odd.
Dataset pad_even_channels(const Dataset& ds);

enum class SplitMode { RandomSections, SequentialTail };

std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(std::string_view name);

/// 0-based timestep indices.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline constexpr double kValidationFraction = 0.2;
inline constexpr std::size_t kValidationSections = 5;

/// 80:20 split. Validation is either five equal random sections or the
/// contiguous tail; every training index lies more than `gap` steps away from
/// every validation index.
Split split_train_val(std::size_t steps, std::size_t gap, SplitMode mode, std::uint64_t seed);

enum class Family { Sine, Saw, Increasing, Wave, RandomWalk, Cbf };

std::string to_string(Family family);
Family family_from_string(std::string_view name);

struct GeneratorConfig {
  Family family = Family::Sine;
  std::size_t steps = 1000;
  std::size_t dims = 2;
  double noise = 0.0;
  double amplitude = 1.0;
  double period = 50.0;
  std::uint64_t seed = 0;
};

Dataset generate_synthetic(const GeneratorConfig& cfg);

/// Applies one anomaly and sets its labels. Fails if the range overlaps an
/// anomaly already injected on one of the same channels.
Dataset inject_anomaly(const Dataset& ds, const AnomalySpec& spec, std::uint64_t seed);

/// Contiguous runs of true labels as 0-based [begin, end).
std::vector<std::pair<std::size_t, std::size_t>> label_ranges(std::span<const std::uint8_t> labels);

}  // namespace tcnf::data
