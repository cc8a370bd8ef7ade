// SPDX-License-Identifier: Apache-2.0
#include "tcnf/model_io.hpp"

#include "tcnf/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tcnf::io {

static_assert(std::endian::native == std::endian::little, "model files are written little-endian");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'C', 'N', 'F'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v(bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("model file truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

json to_json(const flow::ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& c = cfg.conditioner;
  return json{{"method", flow::to_string(cfg.method)},
              {"couplings", cfg.couplings},
              {"conditioner",
               {{"multiplier", c.multiplier}, {"layers", c.layers}, {"dropout", c.dropout}, {"funnel", c.funnel}}},
              {"encoder",
               {{"kind", cond::to_string(e.kind)},
                {"lookback", e.lookback},
                {"dropout", e.dropout},
                {"mlp_layers", e.mlp_layers},
                {"compression", e.compression},
                {"cnn_layers", e.cnn_layers},
                {"kernel", e.kernel},
                {"max_channels", e.max_channels},
                {"lstm_layers", e.lstm_layers}}}};
}

flow::ModelConfig model_config_from_json(const json& j) {
  try {
    flow::ModelConfig cfg;
    cfg.method = flow::method_from_string(j.at("method").get<std::string>());
    cfg.couplings = j.at("couplings").get<std::size_t>();
    const json& c = j.at("conditioner");
    cfg.conditioner.multiplier = c.at("multiplier").get<double>();
    cfg.conditioner.layers = c.at("layers").get<std::size_t>();
    cfg.conditioner.dropout = c.at("dropout").get<double>();
    cfg.conditioner.funnel = c.at("funnel").get<double>();
    const json& e = j.at("encoder");
    cfg.encoder.kind = cond::encoder_kind_from_string(e.at("kind").get<std::string>());
    cfg.encoder.lookback = e.at("lookback").get<std::size_t>();
    cfg.encoder.dropout = e.at("dropout").get<double>();
    cfg.encoder.mlp_layers = e.at("mlp_layers").get<std::size_t>();
    cfg.encoder.compression = e.at("compression").get<double>();
    cfg.encoder.cnn_layers = e.at("cnn_layers").get<std::size_t>();
    cfg.encoder.kernel = e.at("kernel").get<std::size_t>();
    cfg.encoder.max_channels = e.at("max_channels").get<std::size_t>();
    cfg.encoder.lstm_layers = e.at("lstm_layers").get<std::size_t>();
    return cfg;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad model configuration: ") + ex.what());
  }
}

json to_json(const data::NormStats& stats) {
  json arr = json::array();
  for (const auto& c : stats.channels) arr.push_back({{"min", c.min}, {"max", c.max}, {"zero_replaced", c.zero_replaced}});
  return arr;
}

data::NormStats norm_stats_from_json(const json& j) {
  data::NormStats stats;
  for (const auto& c : j) {
    stats.channels.push_back({c.at("min").get<double>(), c.at("max").get<double>(), c.at("zero_replaced").get<bool>()});
  }
  return stats;
}

std::string serialize_model(const flow::FlowModel& model) {
  json header;
  header["config"] = to_json(model.config());
  header["dims"] = model.dims();
  header["seed"] = model.seed();
  header["id"] = model.id;
  if (model.norm_stats) header["norm_stats"] = to_json(*model.norm_stats);
  json params = json::array();
  for (const auto& p : model.params()) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["params"] = params;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put(out, kModelFormatVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& p : model.params()) {
    out.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
  }
  put(out, fnv1a(out));
  return out;
}

flow::FlowModel deserialize_model(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a model file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelFormatVersion) {
    throw FormatError("model file version " + std::to_string(version) + " is not supported; this build reads version " +
                      std::to_string(kModelFormatVersion));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  if (header_len > r.remaining()) throw FormatError("model file truncated: header length exceeds file size");
  json header;
  try {
    header = json::parse(r.take(header_len, "header"));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("corrupt model header: ") + ex.what());
  }

  flow::FlowModel model = [&] {
    try {
      return flow::FlowModel(model_config_from_json(header.at("config")), header.at("dims").get<std::size_t>(),
                             header.at("seed").get<std::uint64_t>());
    } catch (const json::exception& ex) {
      throw FormatError(std::string("corrupt model header: ") + ex.what());
    }
  }();
  model.id = header.value("id", model.id);
  if (header.contains("norm_stats")) model.norm_stats = norm_stats_from_json(header["norm_stats"]);

  const json& params = header.at("params");
  if (params.size() != model.params().size()) {
    throw FormatError("model file lists " + std::to_string(params.size()) + " parameters, architecture has " +
                      std::to_string(model.params().size()));
  }
  std::size_t i = 0;
  for (auto& p : model.params()) {
    const json& entry = params[i++];
    if (entry.at("name").get<std::string>() != p.name || entry.at("shape").get<diff::Shape>() != p.value.shape()) {
      throw FormatError("parameter " + entry.at("name").get<std::string>() + " does not match the architecture");
    }
    const auto raw = r.take(p.value.size() * sizeof(double), "parameter values");
    std::memcpy(p.value.data(), raw.data(), raw.size());
  }
  const std::size_t body_end = r.pos();
  const auto checksum = r.get<std::uint64_t>("checksum");
  if (r.remaining() != 0) throw FormatError("trailing bytes after model checksum");
  if (checksum != fnv1a(std::string_view(bytes.data(), body_end))) throw FormatError("model file checksum mismatch");
  return model;
}

void save_model(const flow::FlowModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write model file " + path.string());
  const std::string bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

flow::FlowModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_model(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tcnf::io
