// SPDX-License-Identifier: Apache-2.0
#include "tcnf/cli.hpp"

#include "tcnf/config.hpp"
#include "tcnf/error.hpp"
#include "tcnf/metrics.hpp"
#include "tcnf/model_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

namespace tcnf::cli {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string method;
  std::size_t lookback = 0;
  std::size_t metric_window = 0;
  std::size_t budget = 0;
  std::vector<std::string> overrides;
  std::map<std::string, std::vector<CLI::Option*>> given;  // one per subcommand
};

void add_common(CLI::App& sub, CommonFlags& f) {
  f.given["config"].push_back(sub.add_option("--config", f.config, "INI file with run settings"));
  f.given["seed"].push_back(sub.add_option("--seed", f.seed, "run seed"));
  f.given["out-dir"].push_back(sub.add_option("--out-dir", f.out_dir, "directory for every output"));
  f.given["method"].push_back(sub.add_option("--method", f.method,
                                                 "realnvp, tcnf-base, tcnf-fixed, tcnf-mlp, tcnf-cnn, tcnf-stateless or tcnf-stateful"));
  f.given["lookback"].push_back(sub.add_option("--lookback", f.lookback, "context length k"));
  f.given["metric-window"].push_back(sub.add_option("--metric-window", f.metric_window, "largest VUS buffer (0: median range length)"));
  f.given["budget"].push_back(sub.add_option("--budget", f.budget, "search budget in candidate trainings"));
  f.given["set"].push_back(sub.add_option("--set", f.overrides, "section.key=value override, repeatable"));
}

bool given(const CommonFlags& f, const std::string& name) {
  const auto& opts = f.given.at(name);
  return std::any_of(opts.begin(), opts.end(), [](const CLI::Option* o) { return o->count() > 0; });
}

config::RunConfig resolve(const CommonFlags& f) {
  config::RunConfig cfg = f.config.empty() ? config::RunConfig{} : config::load_config(f.config);
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
    config::set_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  if (given(f, "seed")) cfg.seed = f.seed;
  if (given(f, "out-dir")) cfg.out_dir = f.out_dir;
  if (given(f, "method")) config::set_value(cfg, "flow.method", f.method);
  if (given(f, "lookback")) cfg.model.encoder.lookback = f.lookback;
  if (given(f, "metric-window")) cfg.metric_window = f.metric_window;
  if (given(f, "budget")) cfg.budget = f.budget;
  return cfg;
}

fs::path prepare_outputs(const config::RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  config::write_config(cfg, dir / "resolved.ini");
  return dir;
}

// A trailing "label" header cell marks a labeled series.
data::Dataset load_series(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  while (!header.empty() && (header.back() == '\r' || header.back() == ' ')) header.pop_back();
  const auto comma = header.rfind(',');
  const bool labeled = comma != std::string::npos && header.substr(comma + 1) == "label";
  return data::load_csv(path, labeled);
}

data::Dataset slice(const data::Dataset& ds, std::size_t begin, std::size_t end) {
  data::Dataset out(end - begin, ds.dims);
  std::copy(ds.values.begin() + static_cast<std::ptrdiff_t>(begin * ds.dims),
            ds.values.begin() + static_cast<std::ptrdiff_t>(end * ds.dims), out.values.begin());
  out.channel_names = ds.channel_names;
  out.provenance = ds.provenance;
  return out;
}

data::Dataset with_anomalies(data::Dataset ds, const config::RunConfig& cfg, std::mt19937_64& rng) {
  ds.labels = data::Labels(ds.steps, 0);
  const std::size_t n = cfg.anomaly_count;
  if (n == 0) return ds;
  const std::size_t region = ds.steps / n;
  for (std::size_t i = 0; i < n; ++i) {
    data::AnomalySpec spec;
    spec.kind = cfg.anomalies[i % cfg.anomalies.size()];
    spec.length = spec.kind == data::AnomalyKind::Spike ? 1 : cfg.anomaly_length;
    spec.magnitude = cfg.anomaly_magnitude;
    // one anomaly per equal region, kept off the region edges
    const std::size_t margin = region / 4;
    if (region < 2 * margin + spec.length + 1) {
      throw ConfigError("generate: " + std::to_string(n) + " anomalies of length " + std::to_string(spec.length) +
                        " do not fit into " + std::to_string(ds.steps) + " steps");
    }
    std::uniform_int_distribution<std::size_t> pick(i * region + margin, (i + 1) * region - margin - spec.length);
    spec.start = pick(rng) + 1;
    ds = data::inject_anomaly(ds, spec, rng());
  }
  return ds;
}

int cmd_generate(const config::RunConfig& cfg) {
  const fs::path dir = prepare_outputs(cfg);
  std::mt19937_64 rng(cfg.seed);
  data::GeneratorConfig gen = cfg.generator;
  const std::size_t t = gen.steps;
  gen.steps = 3 * t;
  gen.seed = rng();
  const data::Dataset full = data::generate_synthetic(gen);

  const data::Dataset clean = slice(full, 0, t);
  const data::Dataset contaminated = with_anomalies(slice(full, t, 2 * t), cfg, rng);
  const data::Dataset test = with_anomalies(slice(full, 2 * t, 3 * t), cfg, rng);
  data::write_csv(clean, dir / "train_clean.csv");
  data::write_csv(contaminated, dir / "train_anomalous.csv");
  data::write_csv(test, dir / "test.csv");

  std::ofstream log(dir / "anomalies.csv", std::ios::binary);
  log << "file,kind,start,length,magnitude\n";
  for (const auto& [name, ds] : {std::pair{"train_anomalous.csv", &contaminated}, std::pair{"test.csv", &test}}) {
    for (const auto& a : ds->anomalies) {
      log << name << ',' << data::to_string(a.kind) << ',' << a.start << ',' << a.length << ',' << a.magnitude << '\n';
    }
  }
  if (!log) throw DataError("write failed for " + (dir / "anomalies.csv").string());
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const std::string& data_path, std::ostream& out) {
  const fs::path dir = prepare_outputs(cfg);
  const data::Dataset series = train::prepare_training_series(load_series(data_path));
  train::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  auto [model, report] = train::train_model(series, cfg.model, tc);
  io::save_model(model, dir / "model.bin");
  train::write_report_csv(report, dir / "train_report.csv");
  out << "trained " << model.id << ": best epoch " << report.best_epoch << " of " << report.epochs.size()
      << ", validation NLL " << report.best_val_loss << '\n';
  return 0;
}

data::Dataset test_series_for(const flow::FlowModel& model, const fs::path& path) {
  if (!model.norm_stats) throw FormatError("model file carries no normalization statistics");
  return train::prepare_test_series(load_series(path), *model.norm_stats);
}

int cmd_score(const config::RunConfig& cfg, const std::string& model_path, const std::string& data_path, bool svg) {
  const fs::path dir = prepare_outputs(cfg);
  const flow::FlowModel model = io::load_model(model_path);
  score::ScoreSeries s = score::score_series(model, test_series_for(model, data_path));
  score::write_scores_csv(s, dir / "scores.csv");
  if (svg) score::write_scores_svg(s, dir / "scores.svg");
  return 0;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics(const score::ScoreSeries& s, const std::string& dataset, const std::string& model,
                   const config::RunConfig& cfg, const fs::path& path, std::ostream& out) {
  if (!s.labels) throw DataError("scores carry no label column; cannot evaluate");
  const auto& labels = *s.labels;
  const std::size_t w = cfg.metric_window > 0 ? cfg.metric_window : metrics::default_window(labels);
  const double threshold = score::select_threshold(s.scores, s.labels, cfg.threshold, cfg.quantile);
  const auto prf = metrics::precision_recall_f1(s.scores, labels, threshold);
  const std::vector<std::pair<std::string, double>> rows = {
      {"auc", metrics::auc_roc(s.scores, labels)},
      {"vus", metrics::vus_roc(s.scores, labels, w)},
      {"auc_pr", metrics::auc_pr(s.scores, labels)},
      {"f1", prf.f1},
      {"precision", prf.precision},
      {"recall", prf.recall},
      {"threshold", threshold},
      {"window", static_cast<double>(w)},
  };
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "# vus: mean range-AUC over buffers 0.." << w
    << ", linear buffer weight 1-d/(w+1), no existence reward; threshold: "
    << (cfg.threshold == score::ThresholdPolicy::BestF1 ? "best-f1" : "quantile " + fmt(cfg.quantile)) << '\n';
  f << "dataset,model,metric,value\n";
  for (const auto& [name, v] : rows) {
    f << dataset << ',' << model << ',' << name << ',' << fmt(v) << '\n';
    out << name << ' ' << v << '\n';
  }
  if (!f) throw DataError("write failed for " + path.string());
}

int cmd_evaluate(const config::RunConfig& cfg, const std::string& scores_path, const std::string& dataset,
                 const std::string& model, std::ostream& out) {
  const fs::path dir = prepare_outputs(cfg);
  write_metrics(score::read_scores_csv(scores_path), dataset, model, cfg, dir / "metrics.csv", out);
  return 0;
}

int cmd_search(const config::RunConfig& cfg, const std::string& data_path, const std::string& eval_path,
               const std::string& test_path, std::ostream& out) {
  const fs::path dir = prepare_outputs(cfg);
  const data::Dataset series = train::prepare_training_series(load_series(data_path));
  std::optional<data::Dataset> eval;
  if (!eval_path.empty()) eval = train::prepare_test_series(load_series(eval_path), *series.norm_stats);

  hpo::SearchConfig sc;
  sc.base = cfg.model;
  sc.objective = cfg.objective;
  sc.budget = cfg.budget;
  if (cfg.population > 0) sc.population = cfg.population;
  sc.sigma0 = cfg.sigma0;
  sc.lookback_max = cfg.lookback_max;
  sc.metric_window = cfg.metric_window;
  sc.candidate_train = cfg.train;
  sc.candidate_train.epochs = cfg.candidate_epochs;
  sc.final_train = cfg.train;
  sc.seed = cfg.seed;
  sc.workers = hpo::workers_from_env();
  const hpo::SearchResult r = hpo::run_search(series, eval, sc);

  hpo::write_trials_csv(r.trials, dir / "trials.csv");
  io::save_model(r.best_model, dir / "best_model.bin");
  train::write_report_csv(r.best_report, dir / "train_report.csv");
  // `train --config best_config.ini` on the same data rebuilds best_model.bin
  config::RunConfig best = cfg;
  best.model = r.best_config;
  best.seed = hpo::trial_seed(cfg.seed, r.best_trial);
  config::write_config(best, dir / "best_config.ini");

  const auto& t = r.trials[r.best_trial];
  out << "best trial " << t.index << " of " << r.trials.size() << ": fitness " << t.fitness << '\n';
  if (!test_path.empty()) {
    score::ScoreSeries s = score::score_series(r.best_model, test_series_for(r.best_model, test_path));
    score::write_scores_csv(s, dir / "scores.csv");
    if (s.labels) {
      write_metrics(s, fs::path(test_path).stem().string(), flow::to_string(cfg.model.method), cfg,
                    dir / "metrics.csv", out);
    }
  }
  return 0;
}

int cmd_export(const config::RunConfig& cfg, const std::string& model_path, const std::string& data_path) {
  const fs::path dir = prepare_outputs(cfg);
  const flow::FlowModel model = io::load_model(model_path);
  score::export_latent(model, test_series_for(model, data_path), dir / "latent.csv");
  return 0;
}

struct Summary {
  std::string label;
  double mean = 0.0;
  double sd = 0.0;
};

// Horizontal bars with one-standard-deviation whiskers, scale [0, 1].
void write_report_svg(const std::vector<Summary>& rows, const fs::path& path) {
  const int left = 260, width = 400, bar = 18, gap = 8;
  const int height = static_cast<int>(rows.size()) * (bar + gap) + 40;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 40 << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const int y = 20 + static_cast<int>(i) * (bar + gap);
    const double m = std::clamp(r.mean, 0.0, 1.0);
    f << "<text x=\"" << left - 8 << "\" y=\"" << y + bar - 4 << "\" text-anchor=\"end\">" << r.label << "</text>\n";
    f << "<rect x=\"" << left << "\" y=\"" << y << "\" width=\"" << m * width << "\" height=\"" << bar
      << "\" fill=\"#4a78b0\"/>\n";
    if (std::isfinite(r.sd)) {
      const double lo = std::clamp(r.mean - r.sd, 0.0, 1.0), hi = std::clamp(r.mean + r.sd, 0.0, 1.0);
      f << "<line x1=\"" << left + lo * width << "\" x2=\"" << left + hi * width << "\" y1=\"" << y + bar / 2
        << "\" y2=\"" << y + bar / 2 << "\" stroke=\"black\"/>\n";
    }
  }
  f << "<line x1=\"" << left << "\" x2=\"" << left << "\" y1=\"10\" y2=\"" << height - 10 << "\" stroke=\"black\"/>\n";
  f << "</svg>\n";
  if (!f) throw DataError("write failed for " + path.string());
}

int cmd_report(const config::RunConfig& cfg, const std::vector<std::string>& inputs, bool svg, std::ostream& out) {
  const fs::path dir = prepare_outputs(cfg);
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> groups;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::size_t line_no = 0;
    bool header = false;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        if (line != "dataset,model,metric,value") throw DataError(path + ": not a metrics file");
        header = true;
        continue;
      }
      std::stringstream ss(line);
      std::string dataset, model, metric, value;
      std::getline(ss, dataset, ',');
      std::getline(ss, model, ',');
      std::getline(ss, metric, ',');
      std::getline(ss, value);
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (value.empty() || *end != '\0') {
        throw DataError(path + ": row " + std::to_string(line_no) + ": non-numeric value '" + value + "'");
      }
      Key k{dataset, model, metric};
      auto [it, fresh] = groups.try_emplace(k);
      if (fresh) order.push_back(k);
      it->second.push_back(v);
    }
  }
  if (order.empty()) throw DataError("report: no metric rows in the inputs");

  std::ofstream f(dir / "report.csv", std::ios::binary);
  f << "dataset,model,metric,n,mean,std\n";
  std::vector<Summary> bars;
  for (const auto& k : order) {
    const auto& v = groups[k];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    // sample standard deviation; undefined for a single run
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : std::nan("");
    const auto& [dataset, model, metric] = k;
    f << dataset << ',' << model << ',' << metric << ',' << v.size() << ',' << fmt(mean) << ',' << fmt(sd) << '\n';
    char line[64];
    std::snprintf(line, sizeof line, "%.3f ± %.3f", mean, sd);
    out << dataset << ' ' << model << ' ' << metric << ' ' << line << " (n=" << v.size() << ")\n";
    if (metric == "auc" || metric == "vus") bars.push_back({dataset + " " + model + " " + metric, mean, sd});
  }
  if (svg) write_report_svg(bars, dir / "report.svg");
  if (!f) throw DataError("write failed for " + (dir / "report.csv").string());
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const GraphError*>(&e)) return "GraphError";
  if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
  if (dynamic_cast<const DataError*>(&e)) return "DataError";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "InternalError";
}

void report_error(std::ostream& err, const std::string& kind, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  err << "error: " << kind << ": " << message << std::endl;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal-conditioned normalizing flows for time-series anomaly detection"};
  app.name("tcnf");
  app.require_subcommand(1, 1);

  CommonFlags flags;
  std::string data_path, model_path, scores_path, eval_path, test_path;
  std::string dataset_id = "dataset", model_id = "model";
  std::string family;
  std::vector<std::string> anomaly_kinds, inputs;
  std::size_t steps = 0, dims = 0;
  double noise = 0.0;
  bool svg = false;

  auto* gen = app.add_subcommand("generate", "write train_clean.csv, train_anomalous.csv and test.csv");
  add_common(*gen, flags);
  auto* family_opt = gen->add_option("--family", family, "sine, saw, increasing, wave, random-walk or cbf");
  auto* anomaly_opt = gen->add_option("--anomaly", anomaly_kinds, "anomaly kind, repeatable");
  auto* steps_opt = gen->add_option("--steps", steps, "steps per file");
  auto* dims_opt = gen->add_option("--dims", dims, "channels");
  auto* noise_opt = gen->add_option("--noise", noise, "Gaussian noise level");

  auto* train_cmd = app.add_subcommand("train", "fit a model; writes model.bin and train_report.csv");
  add_common(*train_cmd, flags);
  train_cmd->add_option("--data", data_path, "training CSV")->required();

  auto* score_cmd = app.add_subcommand("score", "score every step of a series; writes scores.csv");
  add_common(*score_cmd, flags);
  score_cmd->add_option("--model", model_path, "model file")->required();
  score_cmd->add_option("--data", data_path, "series CSV")->required();
  score_cmd->add_flag("--svg", svg, "also write scores.svg");

  auto* eval_cmd = app.add_subcommand("evaluate", "metrics of a labeled score file; writes metrics.csv");
  add_common(*eval_cmd, flags);
  eval_cmd->add_option("--scores", scores_path, "scores CSV with a label column")->required();
  eval_cmd->add_option("--dataset-id", dataset_id, "dataset name in the metrics rows");
  eval_cmd->add_option("--model-id", model_id, "model name in the metrics rows");

  auto* search_cmd = app.add_subcommand("search", "CMA-ES hyperparameter search; writes trials.csv and best_model.bin");
  add_common(*search_cmd, flags);
  search_cmd->add_option("--data", data_path, "training CSV")->required();
  search_cmd->add_option("--eval", eval_path, "labeled CSV for the labeled objective");
  search_cmd->add_option("--test", test_path, "CSV scored with the winning model");

  auto* export_cmd = app.add_subcommand("export-latent", "latent coordinates per step; writes latent.csv");
  add_common(*export_cmd, flags);
  export_cmd->add_option("--model", model_path, "model file")->required();
  export_cmd->add_option("--data", data_path, "series CSV")->required();

  auto* report_cmd = app.add_subcommand("report", "mean and standard deviation over metrics files; writes report.csv");
  add_common(*report_cmd, flags);
  report_cmd->add_option("inputs", inputs, "metrics.csv files")->required();
  report_cmd->add_flag("--svg", svg, "also write report.svg with AUC and VUS bars");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "UsageError", e.what());
    return 2;
  }

  try {
    config::RunConfig cfg = resolve(flags);
    if (gen->parsed()) {
      if (family_opt->count()) config::set_value(cfg, "generate.family", family);
      if (anomaly_opt->count()) {
        std::string joined;
        for (const auto& a : anomaly_kinds) joined += (joined.empty() ? "" : ",") + a;
        config::set_value(cfg, "generate.anomalies", joined);
      }
      if (steps_opt->count()) cfg.generator.steps = steps;
      if (dims_opt->count()) cfg.generator.dims = dims;
      if (noise_opt->count()) cfg.generator.noise = noise;
    }
    cfg.validate();
    if (gen->parsed()) return cmd_generate(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg, data_path, out);
    if (score_cmd->parsed()) return cmd_score(cfg, model_path, data_path, svg);
    if (eval_cmd->parsed()) return cmd_evaluate(cfg, scores_path, dataset_id, model_id, out);
    if (search_cmd->parsed()) return cmd_search(cfg, data_path, eval_path, test_path, out);
    if (export_cmd->parsed()) return cmd_export(cfg, model_path, data_path);
    return cmd_report(cfg, inputs, svg, out);
  } catch (const std::exception& e) {
    report_error(err, error_kind(e), e.what());
    return 1;
  }
}

int run_command(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace tcnf::cli
