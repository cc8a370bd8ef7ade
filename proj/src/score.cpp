// SPDX-License-Identifier: Apache-2.0
#include "tcnf/score.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace tcnf::score {

using diff::Graph;
using diff::Tensor;
using diff::Var;

namespace {

constexpr std::size_t kBatch = 512;
constexpr std::size_t kChunk = 256;

void check_series(const flow::FlowModel& model, const data::Dataset& series) {
  series.validate();
  if (series.dims != model.dims()) {
    throw ShapeError("series has " + std::to_string(series.dims) + " channels, model expects " +
                     std::to_string(model.dims()));
  }
}

void copy_out(const Tensor& lp, const Tensor& logdet, const Tensor& latent, std::size_t offset, PointEval& out) {
  const std::size_t n = lp.size();
  const std::size_t d = latent.cols();
  for (std::size_t i = 0; i < n; ++i) {
    out.log_prob[offset + i] = lp[i];
    out.logdet[offset + i] = logdet[i];
    for (std::size_t j = 0; j < d; ++j) out.latent(offset + i, j) = latent(i, j);
  }
}

void evaluate_stateless(const flow::FlowModel& model, const data::Dataset& series, PointEval& out) {
  const std::size_t k = model.lookback();
  for (std::size_t begin = 0; begin < out.targets.size(); begin += kBatch) {
    const std::size_t n = std::min(kBatch, out.targets.size() - begin);
    const std::span<const std::size_t> chunk(out.targets.data() + begin, n);
    Graph g;
    std::optional<Var> w;
    if (k > 0) w = model.encode(g, cond::gather_contexts(series, chunk, k));
    flow::Pass pass;
    const Var lp = model.log_prob(g, g.input(cond::gather_targets(series, chunk)), w, &pass);
    const Tensor& lp_val = flow::eval_checked(g, lp, pass);
    copy_out(lp_val, g.value(pass.logdet), g.value(pass.out), begin, out);
  }
}

Tensor row_tensor(const data::Dataset& series, std::ptrdiff_t i) {
  const auto row = cond::padded_row(series, i);
  return Tensor({1, series.dims}, std::vector<double>(row.begin(), row.end()));
}

/// Walks targets[first, last), which are consecutive timesteps.
void evaluate_run(const flow::FlowModel& model, const data::Dataset& series, std::size_t first, std::size_t last,
                  PointEval& out) {
  const auto& enc = model.encoder();
  const auto k = static_cast<std::ptrdiff_t>(model.lookback());
  const auto start = static_cast<std::ptrdiff_t>(out.targets[first]);
  cond::StatefulHandle handle = cond::make_handle(enc);
  {
    Graph g;
    cond::LstmState state = cond::load_state(g, handle);
    const auto bound = enc.bind_lstm(g);
    for (std::ptrdiff_t i = start - k; i < start; ++i) enc.step_bound(g, bound, g.input(row_tensor(series, i)), state);
    cond::store_state(g, state, handle);
  }
  for (std::size_t begin = first; begin < last; begin += kChunk) {
    const std::size_t end = std::min(last, begin + kChunk);
    Graph g;
    cond::LstmState state = cond::load_state(g, handle);
    const auto bound = enc.bind_lstm(g);
    Var w = state.h.back();
    std::vector<std::pair<Var, flow::Pass>> steps;
    for (std::size_t i = begin; i < end; ++i) {
      const Var x = g.input(row_tensor(series, static_cast<std::ptrdiff_t>(out.targets[i])));
      flow::Pass pass;
      const Var lp = model.log_prob(g, x, w, &pass);
      steps.emplace_back(lp, std::move(pass));
      w = enc.step_bound(g, bound, x, state);
    }
    for (std::size_t i = begin; i < end; ++i) {
      auto& [lp, pass] = steps[i - begin];
      const Tensor& lp_val = flow::eval_checked(g, lp, pass);
      copy_out(lp_val, g.value(pass.logdet), g.value(pass.out), i, out);
    }
    cond::store_state(g, state, handle);
  }
}

}  // namespace

PointEval evaluate_points(const flow::FlowModel& model, const data::Dataset& series,
                          std::span<const std::size_t> targets) {
  check_series(model, series);
  PointEval out;
  out.targets.assign(targets.begin(), targets.end());
  for (std::size_t i = 0; i < out.targets.size(); ++i) {
    if (out.targets[i] >= series.steps) throw DataError("target index out of range: " + std::to_string(out.targets[i]));
    if (i > 0 && out.targets[i] <= out.targets[i - 1]) throw DataError("targets must be strictly increasing");
  }
  out.log_prob.resize(out.targets.size());
  out.logdet.resize(out.targets.size());
  out.latent = Tensor({out.targets.size(), model.dims()});
  if (out.targets.empty()) return out;
  if (!model.encoder().stateful()) {
    evaluate_stateless(model, series, out);
    return out;
  }
  std::size_t first = 0;
  for (std::size_t i = 1; i <= out.targets.size(); ++i) {
    if (i == out.targets.size() || out.targets[i] != out.targets[i - 1] + 1) {
      evaluate_run(model, series, first, i, out);
      first = i;
    }
  }
  return out;
}

ScoreSeries score_series(const flow::FlowModel& model, const data::Dataset& series) {
  std::vector<std::size_t> all(series.steps);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const PointEval eval = evaluate_points(model, series, all);
  ScoreSeries s;
  s.scores.reserve(eval.log_prob.size());
  for (double lp : eval.log_prob) s.scores.push_back(-lp);
  s.labels = series.labels;
  s.model_id = model.id;
  s.dataset_id = series.provenance;
  return s;
}

void write_scores_csv(const ScoreSeries& s, const std::filesystem::path& path) {
  if (s.labels && s.labels->size() != s.scores.size()) throw DataError("scores and labels differ in length");
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  std::fputs(s.labels ? "t,score,label\n" : "t,score\n", f);
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels) std::fprintf(f, "%zu,%.17g,%d\n", i + 1, s.scores[i], (*s.labels)[i]);
    else std::fprintf(f, "%zu,%.17g\n", i + 1, s.scores[i]);
  }
  if (std::fclose(f) != 0) throw DataError("write failed for " + path.string());
}

ScoreSeries read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string first;
  std::getline(in, first);
  const bool has_labels = std::count(first.begin(), first.end(), ',') == 2;
  const data::Dataset ds = data::load_csv(path, has_labels);
  if (ds.dims != 2) throw DataError(path.string() + ": expected columns t,score[,label]");
  ScoreSeries s;
  s.scores = ds.channel(1);
  s.labels = ds.labels;
  return s;
}

void export_latent(const flow::FlowModel& model, const data::Dataset& series, const std::filesystem::path& path) {
  std::vector<std::size_t> all(series.steps);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const PointEval eval = evaluate_points(model, series, all);
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  std::fputs("t", f);
  for (std::size_t j = 0; j < model.dims(); ++j) std::fprintf(f, ",u%zu", j + 1);
  std::fputs(series.labels ? ",logdet,score,label\n" : ",logdet,score\n", f);
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::fprintf(f, "%zu", i + 1);
    for (std::size_t j = 0; j < model.dims(); ++j) std::fprintf(f, ",%.17g", eval.latent(i, j));
    std::fprintf(f, ",%.17g,%.17g", eval.logdet[i], -eval.log_prob[i]);
    if (series.labels) std::fprintf(f, ",%d", (*series.labels)[i]);
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw DataError("write failed for " + path.string());
}

void write_scores_svg(const ScoreSeries& s, const std::filesystem::path& path) {
  constexpr double width = 1000.0, height = 300.0, pad = 10.0;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::size_t n = s.scores.size();
  if (n > 0) {
    const auto [lo_it, hi_it] = std::minmax_element(s.scores.begin(), s.scores.end());
    const double lo = *lo_it, span = *hi_it > lo ? *hi_it - lo : 1.0;
    const double dx = n > 1 ? (width - 2 * pad) / static_cast<double>(n - 1) : 0.0;
    if (s.labels) {
      for (auto [b, e] : data::label_ranges(*s.labels)) {
        out << "<rect x=\"" << pad + dx * static_cast<double>(b) << "\" y=\"0\" width=\""
            << std::max(1.0, dx * static_cast<double>(e - b)) << "\" height=\"" << height
            << "\" fill=\"#f4c7c3\"/>\n";
      }
    }
    out << "<polyline fill=\"none\" stroke=\"#1f4e99\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double y = height - pad - (s.scores[i] - lo) / span * (height - 2 * pad);
      out << pad + dx * static_cast<double>(i) << ',' << y << (i + 1 < n ? " " : "");
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

double select_threshold(std::span<const double> scores, const std::optional<data::Labels>& labels,
                        ThresholdPolicy policy, double q) {
  if (scores.empty()) throw DataError("no scores to threshold");
  if (policy == ThresholdPolicy::Quantile) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile must lie in [0, 1]");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  if (!labels) throw ConfigError("best-F1 threshold needs labels");
  if (labels->size() != scores.size()) throw DataError("scores and labels differ in length");
  const double positives = static_cast<double>(std::count(labels->begin(), labels->end(), 1));
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, best_f1 = -1.0, best = scores[order.front()];
  for (std::size_t i = 0; i < order.size();) {
    const double theta = scores[order[i]];
    while (i < order.size() && scores[order[i]] == theta) ((*labels)[order[i++]] ? tp : fp) += 1.0;
    const double f1 = 2.0 * tp / (2.0 * tp + fp + (positives - tp));
    if (f1 > best_f1) {
      best_f1 = f1;
      best = theta;
    }
  }
  return best;
}

}  // namespace tcnf::score
