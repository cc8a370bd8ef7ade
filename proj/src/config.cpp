// SPDX-License-Identifier: Apache-2.0
#include "tcnf/config.hpp"

#include "tcnf/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

namespace tcnf::config {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": '" + value + "' is not a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": '" + value + "' is not a number");
  return out;
}

// Wraps the enum parsers so their message names the key.
template <class F>
auto parse_named(const std::string& key, const std::string& value, F&& parse) {
  try {
    return parse(value);
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string join_anomalies(const std::vector<data::AnomalyKind>& kinds) {
  std::string out;
  for (auto k : kinds) {
    if (!out.empty()) out += ',';
    out += data::to_string(k);
  }
  return out;
}

std::vector<data::AnomalyKind> split_anomalies(const std::string& key, const std::string& value) {
  std::vector<data::AnomalyKind> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    std::size_t comma = value.find(',', start);
    if (comma == std::string::npos) comma = value.size();
    std::string item = value.substr(start, comma - start);
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    item = b == std::string::npos ? "" : item.substr(b, e - b + 1);
    if (item.empty()) throw ConfigError(key + ": empty anomaly kind in '" + value + "'");
    out.push_back(parse_named(key, item, data::anomaly_kind_from_string));
    start = comma + 1;
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
};

#define SIZE_KEY(NAME, FIELD)                                                    \
  Key {                                                                          \
    NAME, [](const RunConfig& c) { return fmt(c.FIELD); },                       \
        [](RunConfig& c, const std::string& k, const std::string& v) {           \
          c.FIELD = parse_integer<std::size_t>(k, v);                            \
        }                                                                        \
  }
#define REAL_KEY(NAME, FIELD)                                                                                      \
  Key {                                                                                                            \
    NAME, [](const RunConfig& c) { return fmt(c.FIELD); },                                                         \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_real(k, v); }              \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_integer<std::uint64_t>(k, v); }},
      {"run.out_dir", [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},

      {"flow.method", [](const RunConfig& c) { return flow::to_string(c.model.method); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.set_method(parse_named(k, v, flow::method_from_string));
       }},
      SIZE_KEY("flow.couplings", model.couplings),

      REAL_KEY("conditioner.multiplier", model.conditioner.multiplier),
      SIZE_KEY("conditioner.layers", model.conditioner.layers),
      REAL_KEY("conditioner.dropout", model.conditioner.dropout),
      REAL_KEY("conditioner.funnel", model.conditioner.funnel),

      SIZE_KEY("encoder.lookback", model.encoder.lookback),
      REAL_KEY("encoder.dropout", model.encoder.dropout),
      SIZE_KEY("encoder.mlp_layers", model.encoder.mlp_layers),
      REAL_KEY("encoder.compression", model.encoder.compression),
      SIZE_KEY("encoder.cnn_layers", model.encoder.cnn_layers),
      SIZE_KEY("encoder.kernel", model.encoder.kernel),
      SIZE_KEY("encoder.max_channels", model.encoder.max_channels),
      SIZE_KEY("encoder.lstm_layers", model.encoder.lstm_layers),

      SIZE_KEY("train.epochs", train.epochs),
      SIZE_KEY("train.batch_size", train.batch_size),
      REAL_KEY("train.learning_rate", train.learning_rate),
      REAL_KEY("train.beta1", train.beta1),
      REAL_KEY("train.beta2", train.beta2),
      REAL_KEY("train.epsilon", train.epsilon),
      SIZE_KEY("train.patience", train.patience),
      REAL_KEY("train.clip_norm", train.clip_norm),
      {"train.split", [](const RunConfig& c) { return c.train.split_mode ? data::to_string(*c.train.split_mode) : "auto"; },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "auto") c.train.split_mode.reset();
         else c.train.split_mode = parse_named(k, v, data::split_mode_from_string);
       }},

      {"search.objective", [](const RunConfig& c) { return hpo::to_string(c.objective); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.objective = parse_named(k, v, hpo::objective_from_string);
       }},
      SIZE_KEY("search.budget", budget),
      SIZE_KEY("search.population", population),
      REAL_KEY("search.sigma0", sigma0),
      SIZE_KEY("search.lookback_max", lookback_max),
      SIZE_KEY("search.candidate_epochs", candidate_epochs),

      SIZE_KEY("metrics.window", metric_window),
      {"metrics.threshold",
       [](const RunConfig& c) { return c.threshold == score::ThresholdPolicy::BestF1 ? "best-f1" : "quantile"; },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "best-f1") c.threshold = score::ThresholdPolicy::BestF1;
         else if (v == "quantile") c.threshold = score::ThresholdPolicy::Quantile;
         else throw ConfigError(k + ": unknown threshold policy '" + v + "' (expected best-f1 or quantile)");
       }},
      REAL_KEY("metrics.quantile", quantile),

      {"generate.family", [](const RunConfig& c) { return data::to_string(c.generator.family); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.generator.family = parse_named(k, v, data::family_from_string);
       }},
      SIZE_KEY("generate.steps", generator.steps),
      SIZE_KEY("generate.dims", generator.dims),
      REAL_KEY("generate.noise", generator.noise),
      REAL_KEY("generate.amplitude", generator.amplitude),
      REAL_KEY("generate.period", generator.period),
      {"generate.anomalies", [](const RunConfig& c) { return join_anomalies(c.anomalies); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.anomalies = split_anomalies(k, v); }},
      SIZE_KEY("generate.anomaly_count", anomaly_count),
      SIZE_KEY("generate.anomaly_length", anomaly_length),
      REAL_KEY("generate.anomaly_magnitude", anomaly_magnitude),
  };
  return table;
}

#undef SIZE_KEY
#undef REAL_KEY

}  // namespace

void RunConfig::set_method(flow::Method m) {
  model.method = m;
  model.encoder.kind = flow::encoder_kind_for(m);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (budget == 0) throw ConfigError("search.budget must be positive");
  if (!(sigma0 > 0.0)) throw ConfigError("search.sigma0 must be positive");
  if (lookback_max < 2) throw ConfigError("search.lookback_max must be at least 2");
  if (candidate_epochs == 0) throw ConfigError("search.candidate_epochs must be positive");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw ConfigError("metrics.quantile must lie in [0, 1]");
  if (generator.steps < 100) throw ConfigError("generate.steps must be at least 100");
  if (generator.dims < 2) throw ConfigError("generate.dims must be at least 2");
  if (!(generator.noise >= 0.0)) throw ConfigError("generate.noise must be non-negative");
  if (!(generator.period > 1.0)) throw ConfigError("generate.period must exceed 1");
  if (anomalies.empty()) throw ConfigError("generate.anomalies must name at least one kind");
  if (anomaly_length == 0) throw ConfigError("generate.anomaly_length must be positive");
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(cfg, key, value);
      return;
    }
  }
  const auto dot = key.find('.');
  static const std::set<std::string> sections = {"run",    "flow",   "conditioner", "encoder",
                                                 "train",  "search", "metrics",     "generate"};
  if (dot == std::string::npos || !sections.count(key.substr(0, dot))) {
    throw ConfigError("unknown config section in '" + key + "'");
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig load_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' lies outside any section");
    for (const auto& [name, value] : body) set_value(cfg, section + "." + name, value.data());
  }
  return cfg;
}

std::vector<std::pair<std::string, std::string>> resolved_values(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::string current;
  for (const auto& [key, value] : resolved_values(cfg)) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace tcnf::config
