// SPDX-License-Identifier: Apache-2.0
#include "tcnf/data.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace tcnf::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

double ChannelStats::apply(double v) const {
  if (zero_replaced) return v + 0.5;
  if (max == min) return v - min;
  return 2.0 * (v - min) / (max - min) - 1.0;
}

double ChannelStats::invert(double v) const {
  if (zero_replaced) return v - 0.5;
  if (max == min) return v + min;
  return (v + 1.0) * 0.5 * (max - min) + min;
}

Dataset::Dataset(std::size_t t, std::size_t d) : steps(t), dims(d), values(t * d, 0.0) {}

std::vector<double> Dataset::channel(std::size_t c) const {
  std::vector<double> out(steps);
  for (std::size_t t = 0; t < steps; ++t) out[t] = at(t, c);
  return out;
}

void Dataset::validate() const {
  if (values.size() != steps * dims) throw DataError("dataset holds " + std::to_string(values.size()) +
                                                     " values for " + std::to_string(steps) + "x" +
                                                     std::to_string(dims));
  if (labels && labels->size() != steps) {
    throw DataError("label count " + std::to_string(labels->size()) + " differs from T=" + std::to_string(steps));
  }
  if (!channel_names.empty() && channel_names.size() != dims) throw DataError("channel name count differs from D");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

Dataset load_csv(const std::filesystem::path& path, bool has_labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(line);
  }
  if (lines.empty()) throw DataError(path.string() + ": empty file");

  Dataset ds;
  ds.provenance = path.string();
  std::size_t first = 0;
  std::size_t width = 0;
  {
    const auto cells = split_cells(lines[0]);
    width = cells.size();
    const bool header = std::any_of(cells.begin(), cells.end(), [](auto c) { return !parse_number(c); });
    if (header) {
      first = 1;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (has_labels && c + 1 == cells.size()) break;
        ds.channel_names.emplace_back(cells[c]);
      }
    }
  }
  if (has_labels && width < 2) throw DataError(path.string() + ": need at least one channel and a label column");
  if (first == lines.size()) throw DataError(path.string() + ": no data rows");
  ds.dims = has_labels ? width - 1 : width;
  if (has_labels) ds.labels.emplace();

  for (std::size_t r = first; r < lines.size(); ++r) {
    const auto cells = split_cells(lines[r]);
    const std::size_t row_no = r + 1;
    if (cells.size() != width) {
      throw DataError(path.string() + ": row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " columns, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = parse_number(cells[c]);
      if (!v) {
        throw DataError(path.string() + ": row " + std::to_string(row_no) + " column " + std::to_string(c + 1) +
                        ": non-numeric value '" + std::string(cells[c]) + "'");
      }
      if (has_labels && c + 1 == width) {
        if (*v != 0.0 && *v != 1.0) {
          throw DataError(path.string() + ": row " + std::to_string(row_no) + " column " + std::to_string(c + 1) +
                          ": label '" + std::string(cells[c]) + "' is not 0 or 1");
        }
        ds.labels->push_back(static_cast<std::uint8_t>(*v));
      } else {
        ds.values.push_back(*v);
      }
    }
  }
  ds.steps = lines.size() - first;
  ds.validate();
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < ds.dims; ++c) {
    if (c) out << ',';
    out << (ds.channel_names.empty() ? "ch" + std::to_string(c) : ds.channel_names[c]);
  }
  if (ds.labels) out << ",label";
  out << '\n';
  for (std::size_t t = 0; t < ds.steps; ++t) {
    for (std::size_t c = 0; c < ds.dims; ++c) {
      if (c) out << ',';
      out << format_double(ds.at(t, c));
    }
    if (ds.labels) out << ',' << static_cast<int>((*ds.labels)[t]);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Normalization and padding
// ---------------------------------------------------------------------------

NormStats fit_minmax(const Dataset& train) {
  train.validate();
  if (train.steps == 0) throw DataError("cannot fit normalization on an empty dataset");
  NormStats stats;
  stats.channels.resize(train.dims);
  for (std::size_t c = 0; c < train.dims; ++c) {
    ChannelStats& s = stats.channels[c];
    s.min = s.max = train.at(0, c);
    bool all_zero = true;
    for (std::size_t t = 0; t < train.steps; ++t) {
      const double v = train.at(t, c);
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
      all_zero = all_zero && v == 0.0;
    }
    s.zero_replaced = all_zero;
  }
  return stats;
}

Dataset apply_norm(const Dataset& ds, const NormStats& stats) {
  if (stats.channels.size() != ds.dims) {
    throw DataError("normalization has " + std::to_string(stats.channels.size()) + " channels, data has " +
                    std::to_string(ds.dims));
  }
  Dataset out = ds;
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t c = 0; c < ds.dims; ++c) out.at(t, c) = stats.channels[c].apply(ds.at(t, c));
  out.norm_stats = stats;
  return out;
}

Dataset invert_norm(const Dataset& ds, const NormStats& stats) {
  if (stats.channels.size() != ds.dims) throw DataError("normalization channel count differs from data");
  Dataset out = ds;
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t c = 0; c < ds.dims; ++c) out.at(t, c) = stats.channels[c].invert(ds.at(t, c));
  out.norm_stats.reset();
  return out;
}

Dataset normalize_minmax(const Dataset& ds) { return apply_norm(ds, fit_minmax(ds)); }

Dataset pad_even_channels(const Dataset& ds) {
  if (ds.dims % 2 == 0) return ds;
  Dataset out(ds.steps, ds.dims + 1);
  out.labels = ds.labels;
  out.norm_stats = ds.norm_stats;
  out.provenance = ds.provenance;
  out.anomalies = ds.anomalies;
  for (std::size_t t = 0; t < ds.steps; ++t) {
    for (std::size_t c = 0; c < ds.dims; ++c) out.at(t, c) = ds.at(t, c);
    out.at(t, ds.dims) = 0.5;
  }
  if (!ds.channel_names.empty()) {
    out.channel_names = ds.channel_names;
    out.channel_names.push_back("pad");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

std::string to_string(SplitMode mode) {
  return mode == SplitMode::RandomSections ? "random-sections" : "sequential-tail";
}

SplitMode split_mode_from_string(std::string_view name) {
  if (name == "random-sections") return SplitMode::RandomSections;
  if (name == "sequential-tail") return SplitMode::SequentialTail;
  throw ConfigError("unknown split mode '" + std::string(name) + "'");
}

Split split_train_val(std::size_t steps, std::size_t gap, SplitMode mode, std::uint64_t seed) {
  const auto val_total = static_cast<std::size_t>(std::floor(kValidationFraction * static_cast<double>(steps)));
  if (val_total < kValidationSections) {
    throw DataError("series of length " + std::to_string(steps) + " is too short for an 80:20 split");
  }
  std::vector<char> is_val(steps, 0);
  if (mode == SplitMode::SequentialTail) {
    std::fill(is_val.end() - static_cast<std::ptrdiff_t>(val_total), is_val.end(), 1);
  } else {
    const std::size_t len = val_total / kValidationSections;
    const std::size_t slack = steps - kValidationSections * len;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, slack);
    std::vector<std::size_t> offsets(kValidationSections);
    for (auto& o : offsets) o = pick(rng);
    std::sort(offsets.begin(), offsets.end());
    for (std::size_t i = 0; i < kValidationSections; ++i) {
      const std::size_t start = offsets[i] + i * len;
      std::fill_n(is_val.begin() + static_cast<std::ptrdiff_t>(start), len, 1);
    }
  }

  // Distance from each index to the nearest validation index, two sweeps.
  std::vector<std::size_t> dist(steps, steps + gap + 1);
  std::size_t last = steps + gap + 1;
  for (std::size_t t = 0; t < steps; ++t) {
    if (is_val[t]) last = 0;
    else if (last <= steps + gap) ++last;
    dist[t] = last;
  }
  last = steps + gap + 1;
  for (std::size_t t = steps; t-- > 0;) {
    if (is_val[t]) last = 0;
    else if (last <= steps + gap) ++last;
    dist[t] = std::min(dist[t], last);
  }

  Split split;
  for (std::size_t t = 0; t < steps; ++t) {
    if (is_val[t]) split.val.push_back(t);
    else if (dist[t] > gap) split.train.push_back(t);
  }
  if (split.train.empty()) {
    throw DataError("no training indices left for T=" + std::to_string(steps) + " with gap " + std::to_string(gap));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

std::string to_string(Family family) {
  switch (family) {
    case Family::Sine: return "sine";
    case Family::Saw: return "saw";
    case Family::Increasing: return "increasing";
    case Family::Wave: return "wave";
    case Family::RandomWalk: return "random-walk";
    case Family::Cbf: return "cbf";
  }
  return "?";
}

Family family_from_string(std::string_view name) {
  for (Family f : {Family::Sine, Family::Saw, Family::Increasing, Family::Wave, Family::RandomWalk, Family::Cbf}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown sequence family '" + std::string(name) + "'");
}

Dataset generate_synthetic(const GeneratorConfig& cfg) {
  if (cfg.steps < 100) throw ConfigError("synthetic series need T >= 100");
  if (cfg.dims < 2) throw ConfigError("synthetic series need D >= 2");
  if (!(cfg.period > 1.0)) throw ConfigError("period must exceed 1");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double a = cfg.amplitude;
  const double p = cfg.period;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds(cfg.steps, cfg.dims);
  for (std::size_t c = 0; c < cfg.dims; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  const auto phase = [&](std::size_t c) { return two_pi * static_cast<double>(c) / static_cast<double>(cfg.dims); };

  switch (cfg.family) {
    case Family::Sine:
      for (std::size_t t = 0; t < cfg.steps; ++t)
        for (std::size_t c = 0; c < cfg.dims; ++c)
          ds.at(t, c) = a * std::sin(two_pi * static_cast<double>(t) / p + phase(c));
      break;
    case Family::Saw:
      for (std::size_t t = 0; t < cfg.steps; ++t) {
        for (std::size_t c = 0; c < cfg.dims; ++c) {
          const double u = static_cast<double>(t) / p + static_cast<double>(c) / static_cast<double>(cfg.dims);
          ds.at(t, c) = a * (2.0 * (u - std::floor(u)) - 1.0);
        }
      }
      break;
    case Family::Increasing: {
      const double denom = static_cast<double>(cfg.steps - 1);
      for (std::size_t t = 0; t < cfg.steps; ++t)
        for (std::size_t c = 0; c < cfg.dims; ++c)
          ds.at(t, c) = a * static_cast<double>(t) / denom +
                        0.25 * a * std::sin(two_pi * static_cast<double>(t) / p + phase(c));
      break;
    }
    case Family::Wave:
      for (std::size_t t = 0; t < cfg.steps; ++t) {
        for (std::size_t c = 0; c < cfg.dims; ++c) {
          const double x = two_pi * static_cast<double>(t) / p + phase(c);
          ds.at(t, c) = a * (0.6 * std::sin(x) + 0.4 * std::sin(2.5 * x + 0.5));
        }
      }
      break;
    case Family::RandomWalk: {
      std::vector<double> level(cfg.dims, 0.0);
      for (std::size_t t = 0; t < cfg.steps; ++t) {
        const double shared = normal(rng);
        for (std::size_t c = 0; c < cfg.dims; ++c) {
          level[c] += 0.1 * a * (0.7 * normal(rng) + 0.3 * shared);
          ds.at(t, c) = level[c];
        }
      }
      break;
    }
    case Family::Cbf: {
      const auto seg = static_cast<std::size_t>(p);
      std::uniform_int_distribution<int> shape(0, 2);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t c = 0; c < cfg.dims; ++c) {
        for (std::size_t s0 = 0; s0 < cfg.steps; s0 += seg) {
          const int kind = shape(rng);
          const double lo = (0.1 + 0.2 * unit(rng)) * p;
          const double hi = lo + (0.4 + 0.2 * unit(rng)) * p;
          const double height = a * (1.0 + 0.1 * normal(rng));
          for (std::size_t t = s0; t < std::min(cfg.steps, s0 + seg); ++t) {
            const double u = static_cast<double>(t - s0);
            double v = 0.0;
            if (u >= lo && u <= hi) {
              const double r = (u - lo) / (hi - lo);
              v = kind == 0 ? height : kind == 1 ? height * r : height * (1.0 - r);
            }
            ds.at(t, c) = v;
          }
        }
      }
      break;
    }
  }
  if (cfg.noise > 0.0) {
    for (double& v : ds.values) v += cfg.noise * a * normal(rng);
  }
  ds.provenance = "synthetic:" + to_string(cfg.family) + ":seed=" + std::to_string(cfg.seed);
  return ds;
}

std::string to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::Spike: return "spike";
    case AnomalyKind::Platform: return "platform";
    case AnomalyKind::MeanShift: return "mean-shift";
    case AnomalyKind::Amplitude: return "amplitude";
    case AnomalyKind::Pattern: return "pattern";
    case AnomalyKind::Variance: return "variance";
    case AnomalyKind::Trend: return "trend";
    case AnomalyKind::Cutoff: return "cutoff";
  }
  return "?";
}

AnomalyKind anomaly_kind_from_string(std::string_view name) {
  for (AnomalyKind k : {AnomalyKind::Spike, AnomalyKind::Platform, AnomalyKind::MeanShift, AnomalyKind::Amplitude,
                        AnomalyKind::Pattern, AnomalyKind::Variance, AnomalyKind::Trend, AnomalyKind::Cutoff}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown anomaly kind '" + std::string(name) + "'");
}

namespace {

std::vector<std::size_t> affected_channels(const AnomalySpec& spec, std::size_t dims) {
  if (!spec.channels.empty()) return spec.channels;
  std::vector<std::size_t> all(dims);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

}  // namespace

Dataset inject_anomaly(const Dataset& ds, const AnomalySpec& spec, std::uint64_t seed) {
  ds.validate();
  if (spec.start < 1 || spec.length < 1 || spec.start + spec.length - 1 > ds.steps) {
    throw DataError("anomaly range [" + std::to_string(spec.start) + ", " +
                    std::to_string(spec.start + spec.length - 1) + "] outside [1, " + std::to_string(ds.steps) + "]");
  }
  if (spec.kind == AnomalyKind::Spike && spec.length != 1) throw DataError("a spike anomaly has length 1");
  const auto channels = affected_channels(spec, ds.dims);
  for (std::size_t c : channels) {
    if (c >= ds.dims) throw DataError("anomaly channel " + std::to_string(c) + " out of range");
  }
  const std::size_t begin = spec.start - 1;
  const std::size_t end = begin + spec.length;
  for (const AnomalySpec& other : ds.anomalies) {
    const std::size_t ob = other.start - 1;
    const std::size_t oe = ob + other.length;
    if (ob >= end || begin >= oe) continue;
    const auto oc = affected_channels(other, ds.dims);
    for (std::size_t c : channels) {
      if (std::find(oc.begin(), oc.end(), c) != oc.end()) {
        throw DataError("anomaly at " + std::to_string(spec.start) + " overlaps an existing " + to_string(other.kind) +
                        " anomaly at " + std::to_string(other.start) + " on channel " + std::to_string(c));
      }
    }
  }

  Dataset out = ds;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c : channels) {
    const std::vector<double> orig = ds.channel(c);
    double sigma = std_of(orig);
    if (sigma < 1e-12) sigma = 1.0;
    const double mu = mean_of(orig);
    switch (spec.kind) {
      case AnomalyKind::Spike: {
        const std::size_t from = begin >= 10 ? begin - 10 : 0;
        double local = std_of(std::span<const double>(orig).subspan(from, begin - from));
        if (local < 1e-12) local = sigma;
        out.at(begin, c) += spec.magnitude * local;
        break;
      }
      case AnomalyKind::Platform:
        for (std::size_t t = begin; t < end; ++t) out.at(t, c) = orig[begin] + spec.magnitude * sigma;
        break;
      case AnomalyKind::MeanShift:
        for (std::size_t t = begin; t < end; ++t) out.at(t, c) += spec.magnitude * sigma;
        break;
      case AnomalyKind::Amplitude:
        for (std::size_t t = begin; t < end; ++t) out.at(t, c) = mu + (orig[t] - mu) * spec.magnitude;
        break;
      case AnomalyKind::Pattern:
        for (std::size_t t = begin; t < end; ++t) {
          const double src = static_cast<double>(begin) + static_cast<double>(t - begin) * spec.magnitude;
          const double clamped = std::clamp(src, 0.0, static_cast<double>(ds.steps - 1));
          const auto lo = static_cast<std::size_t>(std::floor(clamped));
          const std::size_t hi = std::min(lo + 1, ds.steps - 1);
          const double frac = clamped - static_cast<double>(lo);
          out.at(t, c) = orig[lo] * (1.0 - frac) + orig[hi] * frac;
        }
        break;
      case AnomalyKind::Variance:
        for (std::size_t t = begin; t < end; ++t) out.at(t, c) += spec.magnitude * sigma * normal(rng);
        break;
      case AnomalyKind::Trend:
        for (std::size_t t = begin; t < end; ++t)
          out.at(t, c) += spec.magnitude * sigma * static_cast<double>(t - begin + 1) / static_cast<double>(spec.length);
        break;
      case AnomalyKind::Cutoff:
        for (std::size_t t = begin; t < end; ++t) out.at(t, c) = 0.0;
        break;
    }
  }
  if (!out.labels) out.labels = Labels(ds.steps, 0);
  for (std::size_t t = begin; t < end; ++t) (*out.labels)[t] = 1;
  out.anomalies.push_back(spec);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> label_ranges(std::span<const std::uint8_t> labels) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t t = 0;
  while (t < labels.size()) {
    if (!labels[t]) {
      ++t;
      continue;
    }
    const std::size_t b = t;
    while (t < labels.size() && labels[t]) ++t;
    ranges.emplace_back(b, t);
  }
  return ranges;
}

}  // namespace tcnf::data
