// SPDX-License-Identifier: Apache-2.0
#include "tcnf/train.hpp"

#include "tcnf/error.hpp"
#include "tcnf/score.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace tcnf::train {

using diff::Graph;
using diff::Tensor;
using diff::Var;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  std::fputs("epoch,train_loss,val_loss,best\n", f);
  for (const auto& e : report.epochs) {
    std::fprintf(f, "%zu,%.17g,%.17g,%d\n", e.epoch, e.train_loss, e.val_loss, e.epoch == report.best_epoch ? 1 : 0);
  }
  if (std::fclose(f) != 0) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

Adam::Adam(diff::ParameterStore& store, double lr, double beta1, double beta2, double epsilon)
    : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const auto& p : store) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

double global_grad_norm(const diff::ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store) {
    if (!p.trainable || p.grad.size() != p.value.size()) continue;
    for (double g : p.grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

void Adam::step(double clip_norm) {
  for (const auto& p : *store_) {
    if (!p.trainable || p.grad.size() != p.value.size()) continue;
    for (double g : p.grad.values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + p.name);
    }
  }
  const double norm = global_grad_norm(*store_);
  const double factor = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& p : *store_) {
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    ++i;
    if (!p.trainable || p.grad.size() != p.value.size()) continue;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] * factor;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      p.value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

data::Split make_split(std::size_t steps, const flow::ModelConfig& model_cfg, const TrainConfig& cfg) {
  const bool stateful = model_cfg.encoder.kind == cond::EncoderKind::LstmStateful;
  const data::SplitMode mode =
      cfg.split_mode.value_or(stateful ? data::SplitMode::SequentialTail : data::SplitMode::RandomSections);
  return data::split_train_val(steps, model_cfg.encoder.context_length(), mode, cfg.seed);
}

namespace {

std::vector<std::size_t> with_history(const std::vector<std::size_t>& idx, std::size_t lookback) {
  std::vector<std::size_t> out;
  for (std::size_t t : idx) {
    if (t >= lookback) out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> training_targets(const data::Split& split, std::size_t lookback) {
  return with_history(split.train, lookback);
}

std::vector<std::size_t> validation_targets(const data::Split& split, std::size_t lookback) {
  return with_history(split.val, lookback);
}

data::Dataset prepare_training_series(const data::Dataset& raw) {
  return data::pad_even_channels(data::normalize_minmax(raw));
}

data::Dataset prepare_test_series(const data::Dataset& raw, const data::NormStats& stats) {
  return data::pad_even_channels(data::apply_norm(raw, stats));
}

double mean_nll(const flow::FlowModel& model, const data::Dataset& series, const std::vector<std::size_t>& targets) {
  if (targets.empty()) throw DataError("mean_nll needs at least one target");
  const auto eval = score::evaluate_points(model, series, targets);
  double total = 0.0;
  for (double lp : eval.log_prob) total -= lp;
  return total / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------

namespace {

Tensor row_tensor(const data::Dataset& series, std::ptrdiff_t i) {
  const auto row = cond::padded_row(series, i);
  return Tensor({1, series.dims}, std::vector<double>(row.begin(), row.end()));
}

/// One epoch over shuffled mini-batches of independent windows. Returns the
/// size-weighted mean batch loss.
double stateless_epoch(flow::FlowModel& model, const data::Dataset& series, std::vector<std::size_t>& targets,
                       const TrainConfig& cfg, Adam& adam, std::mt19937_64& rng) {
  const std::size_t k = model.lookback();
  std::shuffle(targets.begin(), targets.end(), rng);
  double total = 0.0;
  for (std::size_t begin = 0; begin < targets.size(); begin += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, targets.size() - begin);
    const std::span<const std::size_t> batch(targets.data() + begin, n);
    Graph g(diff::Mode::Training, rng());
    std::optional<Var> w;
    if (k > 0) w = model.encode(g, cond::gather_contexts(series, batch, k));
    flow::Pass pass;
    const Var loss = flow::nll_loss(model, g, cond::gather_targets(series, batch), w, &pass);
    const double value = flow::eval_checked(g, loss, pass).item();
    model.params().zero_grad();
    g.backward(loss);
    adam.step(cfg.clip_norm);
    total += value * static_cast<double>(n);
  }
  return total / static_cast<double>(targets.size());
}

/// Contiguous runs of consecutive indices.
std::vector<std::vector<std::size_t>> contiguous_runs(const std::vector<std::size_t>& idx) {
  std::vector<std::vector<std::size_t>> runs;
  for (std::size_t t : idx) {
    if (runs.empty() || runs.back().back() + 1 != t) runs.emplace_back();
    runs.back().push_back(t);
  }
  return runs;
}

/// One epoch of truncated backpropagation through time: each run is walked in
/// order with the recurrent state carried across chunks of `lookback` steps,
/// one optimizer step per chunk.
double stateful_epoch(flow::FlowModel& model, const data::Dataset& series,
                      const std::vector<std::vector<std::size_t>>& runs, const TrainConfig& cfg, Adam& adam,
                      std::mt19937_64& rng) {
  const auto& enc = model.encoder();
  const std::size_t k = model.lookback();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& run : runs) {
    cond::StatefulHandle handle = cond::make_handle(enc);
    {
      Graph g;
      cond::LstmState state = cond::load_state(g, handle);
      const auto bound = enc.bind_lstm(g);
      const auto start = static_cast<std::ptrdiff_t>(run.front());
      for (std::ptrdiff_t i = start - static_cast<std::ptrdiff_t>(k); i < start; ++i) {
        enc.step_bound(g, bound, g.input(row_tensor(series, i)), state);
      }
      cond::store_state(g, state, handle);
    }
    for (std::size_t begin = 0; begin < run.size(); begin += k) {
      const std::size_t end = std::min(run.size(), begin + k);
      Graph g(diff::Mode::Training, rng());
      cond::LstmState state = cond::load_state(g, handle);
      const auto bound = enc.bind_lstm(g);
      Var w = state.h.back();
      std::vector<std::pair<Var, flow::Pass>> steps;
      Var sum;
      for (std::size_t i = begin; i < end; ++i) {
        const Var x = g.input(row_tensor(series, static_cast<std::ptrdiff_t>(run[i])));
        flow::Pass pass;
        const Var lp = model.log_prob(g, x, w, &pass);
        sum = i == begin ? diff::sum(lp) : sum + diff::sum(lp);
        steps.emplace_back(lp, std::move(pass));
        w = enc.step_bound(g, bound, x, state);
      }
      const Var loss = sum * (-1.0 / static_cast<double>(end - begin));
      for (auto& [lp, pass] : steps) flow::eval_checked(g, lp, pass);
      const double value = g.eval_pending(loss).item();
      model.params().zero_grad();
      g.backward(loss);
      cond::store_state(g, state, handle);
      adam.step(cfg.clip_norm);
      total += value * static_cast<double>(end - begin);
      count += end - begin;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

std::pair<flow::FlowModel, TrainReport> train_model(const data::Dataset& series, const flow::ModelConfig& model_cfg,
                                                     const TrainConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  model_cfg.validate();
  cfg.validate();
  series.validate();
  if (series.dims < 2 || series.dims % 2 != 0) {
    throw ShapeError("training series needs an even number of channels, got " + std::to_string(series.dims));
  }
  flow::FlowModel model(model_cfg, series.dims, cfg.seed);
  model.norm_stats = series.norm_stats;
  const std::size_t k = model.lookback();
  const data::Split split = make_split(series.steps, model_cfg, cfg);
  std::vector<std::size_t> train_idx = training_targets(split, k);
  const std::vector<std::size_t> val_idx = validation_targets(split, k);
  if (train_idx.empty() || val_idx.empty()) {
    throw DataError("series of " + std::to_string(series.steps) + " steps leaves no training or validation targets");
  }
  const bool stateful = model.encoder().stateful();
  const auto runs = contiguous_runs(train_idx);

  Adam adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);
  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = model.params().snapshot();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      rec.train_loss = stateful ? stateful_epoch(model, series, runs, cfg, adam, rng)
                                : stateless_epoch(model, series, train_idx, cfg, adam, rng);
      rec.val_loss = mean_nll(model, series, val_idx);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " during epoch " + std::to_string(epoch) +
                         " (last finite epoch: " + std::to_string(epoch - 1) + ")");
    }
    report.epochs.push_back(rec);
    if (rec.val_loss < report.best_val_loss) {
      report.best_val_loss = rec.val_loss;
      report.best_epoch = epoch;
      best = model.params().snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params().restore(best);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

}  // namespace tcnf::train
