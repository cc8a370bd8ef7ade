// SPDX-License-Identifier: Apache-2.0
#include "tcnf/hyperopt.hpp"

#include "tcnf/error.hpp"
#include "tcnf/metrics.hpp"
#include "tcnf/score.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

namespace tcnf::hpo {

void SearchSpace::validate() const {
  std::set<std::string> seen;
  for (const auto& p : params) {
    if (!(p.lower < p.upper)) throw ConfigError("search range for " + p.name + " is empty");
    if (!seen.insert(p.name).second) throw ConfigError("search parameter " + p.name + " listed twice");
  }
}

SearchSpace search_space(flow::Method method, std::size_t lookback_max) {
  using flow::Method;
  if (lookback_max < 2) throw ConfigError("lookback_max must be at least 2");
  SearchSpace s;
  s.params = {{"flow.couplings", 3, 20, ParamKind::Integer},
              {"conditioner.multiplier", 1, 50, ParamKind::Real},
              {"conditioner.layers", 3, 8, ParamKind::Integer},
              {"conditioner.dropout", 0.1, 0.9, ParamKind::Real},
              {"conditioner.funnel", 1, 10, ParamKind::Real}};
  if (method == Method::RealNvp) return s;
  s.params.push_back({"encoder.lookback", 1, static_cast<double>(lookback_max), ParamKind::Integer});
  switch (method) {
    case Method::TcnfMlp:
      s.params.push_back({"encoder.layers", 3, 20, ParamKind::Integer});
      s.params.push_back({"encoder.dropout", 0.1, 0.9, ParamKind::Real});
      s.params.push_back({"encoder.compression", 1, 20, ParamKind::Real});
      break;
    case Method::TcnfCnn:
      s.params.push_back({"encoder.layers", 1, 5, ParamKind::Integer});
      s.params.push_back({"encoder.dropout", 0.1, 0.9, ParamKind::Real});
      s.params.push_back({"encoder.kernel", 3, 7, ParamKind::Integer});
      s.params.push_back({"encoder.max_channels", 1, 20, ParamKind::Integer});
      break;
    case Method::TcnfStateless:
    case Method::TcnfStateful:
      s.params.push_back({"encoder.layers", 1, 10, ParamKind::Integer});
      s.params.push_back({"encoder.dropout", 0.1, 0.9, ParamKind::Real});
      break;
    default: break;
  }
  return s;
}

Assignment decode(std::span<const double> unit, const SearchSpace& space) {
  if (unit.size() != space.size()) throw ConfigError("candidate length does not match the search space");
  Assignment out;
  for (std::size_t i = 0; i < unit.size(); ++i) {
    const auto& p = space.params[i];
    double v = p.lower + unit[i] * (p.upper - p.lower);
    if (p.kind == ParamKind::Integer) v = std::floor(v + 0.5);
    out.emplace_back(p.name, std::clamp(v, p.lower, p.upper));
  }
  return out;
}

flow::ModelConfig apply_assignment(const Assignment& a, flow::ModelConfig cfg) {
  auto count = [](double v) { return static_cast<std::size_t>(std::llround(v)); };
  for (const auto& [name, v] : a) {
    if (name == "flow.couplings") cfg.couplings = count(v);
    else if (name == "conditioner.multiplier") cfg.conditioner.multiplier = v;
    else if (name == "conditioner.layers") cfg.conditioner.layers = count(v);
    else if (name == "conditioner.dropout") cfg.conditioner.dropout = v;
    else if (name == "conditioner.funnel") cfg.conditioner.funnel = v;
    else if (name == "encoder.lookback") cfg.encoder.lookback = count(v);
    else if (name == "encoder.dropout") cfg.encoder.dropout = v;
    else if (name == "encoder.compression") cfg.encoder.compression = v;
    else if (name == "encoder.kernel") cfg.encoder.kernel = count(v);
    else if (name == "encoder.max_channels") cfg.encoder.max_channels = count(v);
    else if (name == "encoder.layers") {
      switch (cfg.encoder.kind) {
        case cond::EncoderKind::Mlp: cfg.encoder.mlp_layers = count(v); break;
        case cond::EncoderKind::Cnn: cfg.encoder.cnn_layers = count(v); break;
        case cond::EncoderKind::LstmStateless:
        case cond::EncoderKind::LstmStateful: cfg.encoder.lstm_layers = count(v); break;
        default: throw ConfigError("encoder.layers does not apply to encoder " + cond::to_string(cfg.encoder.kind));
      }
    } else {
      throw ConfigError("unknown search parameter " + name);
    }
  }
  return cfg;
}

std::string to_string(Objective o) { return o == Objective::Labeled ? "labeled-30-70" : "val-loss"; }

Objective objective_from_string(std::string_view name) {
  if (name == "labeled-30-70") return Objective::Labeled;
  if (name == "val-loss") return Objective::ValidationLoss;
  throw ConfigError("unknown objective '" + std::string(name) + "' (expected labeled-30-70 or val-loss)");
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t workers_from_env() {
  const char* v = std::getenv("TCNF_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("TCNF_WORKERS must be a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

LabeledScore labeled_fitness(const flow::FlowModel& model, const data::Dataset& eval_series, std::size_t window) {
  if (!eval_series.labels) throw ConfigError("the labeled objective needs an evaluation series with labels");
  const auto s = score::score_series(model, eval_series);
  const auto& labels = *eval_series.labels;
  const std::size_t w = window > 0 ? window : metrics::default_window(labels);
  LabeledScore r;
  r.auc = metrics::auc_roc(s.scores, labels);
  r.vus = metrics::vus_roc(s.scores, labels, w);
  r.fitness = -metrics::combined_objective(r.auc, r.vus);
  return r;
}

namespace {

void evaluate(Trial& trial, const data::Dataset& train_series, const std::optional<data::Dataset>& eval_series,
              const SearchConfig& cfg) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  trial.fitness = trial.auc = trial.vus = trial.val_loss = nan;
  try {
    const flow::ModelConfig model_cfg = apply_assignment(trial.params, cfg.base);
    train::TrainConfig tc = cfg.candidate_train;
    tc.seed = trial_seed(cfg.seed, trial.index);
    auto [model, report] = train::train_model(train_series, model_cfg, tc);
    trial.val_loss = report.best_val_loss;
    if (cfg.objective == Objective::Labeled) {
      const auto r = labeled_fitness(model, *eval_series, cfg.metric_window);
      trial.auc = r.auc;
      trial.vus = r.vus;
      trial.fitness = r.fitness;
    } else {
      trial.fitness = report.best_val_loss;
    }
  } catch (const NumericError& e) {
    trial.error = e.what();
  } catch (const DataError& e) {
    trial.error = e.what();
  }
}

}  // namespace

SearchResult run_search(const data::Dataset& train_series, const std::optional<data::Dataset>& eval_series,
                        const SearchConfig& cfg) {
  cfg.base.validate();
  if (cfg.objective == Objective::Labeled && (!eval_series || !eval_series->labels)) {
    throw ConfigError("the labeled objective needs an evaluation series with labels");
  }
  const SearchSpace space = search_space(cfg.base.method, cfg.lookback_max);
  space.validate();
  CmaOptions opts;
  opts.dims = space.size();
  opts.population = cfg.population;
  opts.sigma0 = cfg.sigma0;
  opts.seed = cfg.seed;
  CmaEs es(opts);
  if (cfg.budget < es.population()) {
    throw ConfigError("search budget " + std::to_string(cfg.budget) + " is smaller than the population " +
                      std::to_string(es.population()));
  }
  const std::size_t workers = std::max<std::size_t>(1, cfg.workers);

  std::vector<Trial> trials;
  std::size_t generation = 0;
  while (trials.size() + es.population() <= cfg.budget) {
    const auto candidates = es.ask();
    const std::size_t first = trials.size();
    for (const auto& c : candidates) {
      Trial t;
      t.index = trials.size();
      t.generation = generation;
      t.params = decode(c, space);
      trials.push_back(std::move(t));
    }
    std::atomic<std::size_t> next{first};
    auto work = [&] {
      for (std::size_t i = next++; i < trials.size(); i = next++) evaluate(trials[i], train_series, eval_series, cfg);
    };
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < std::min(workers, candidates.size()); ++w) pool.emplace_back(work);
      for (auto& th : pool) th.join();
    }
    std::vector<double> fitness;
    for (std::size_t i = first; i < trials.size(); ++i) fitness.push_back(trials[i].fitness);
    es.tell(candidates, fitness);
    ++generation;
  }

  std::size_t best = trials.size();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (std::isnan(trials[i].fitness)) continue;
    if (best == trials.size() || trials[i].fitness < trials[best].fitness) best = i;
  }
  if (best == trials.size()) throw NumericError("every search candidate failed to train");

  const flow::ModelConfig best_cfg = apply_assignment(trials[best].params, cfg.base);
  train::TrainConfig tc = cfg.final_train;
  tc.seed = trial_seed(cfg.seed, best);
  auto [model, report] = train::train_model(train_series, best_cfg, tc);
  return SearchResult{std::move(trials), best, best_cfg, std::move(model), std::move(report)};
}

void write_trials_csv(const std::vector<Trial>& trials, const std::filesystem::path& path) {
  std::vector<std::size_t> order(trials.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    return std::isnan(trials[i].fitness) ? std::numeric_limits<double>::infinity() : trials[i].fitness;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<std::size_t> rank(trials.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;

  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  std::fputs("generation,trial,rank", f);
  if (!trials.empty()) {
    for (const auto& [name, v] : trials.front().params) std::fprintf(f, ",%s", name.c_str());
  }
  std::fputs(",fitness,auc,vus,val_loss,error\n", f);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    std::fprintf(f, "%zu,%zu,%zu", t.generation, t.index, rank[i]);
    for (const auto& [name, v] : t.params) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, ",%.17g,%.17g,%.17g,%.17g,", t.fitness, t.auc, t.vus, t.val_loss);
    std::string err = t.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    std::fprintf(f, "%s\n", err.c_str());
  }
  if (std::fclose(f) != 0) throw DataError("write failed for " + path.string());
}

}  // namespace tcnf::hpo
