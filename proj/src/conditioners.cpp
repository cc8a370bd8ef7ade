// SPDX-License-Identifier: Apache-2.0
#include "tcnf/conditioners.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <cmath>

namespace tcnf::cond {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::None: return "none";
    case EncoderKind::Passthrough: return "passthrough";
    case EncoderKind::Fixed: return "fixed-encode";
    case EncoderKind::Mlp: return "mlp";
    case EncoderKind::Cnn: return "cnn";
    case EncoderKind::LstmStateless: return "lstm-stateless";
    case EncoderKind::LstmStateful: return "lstm-stateful";
  }
  return "?";
}

EncoderKind encoder_kind_from_string(std::string_view name) {
  for (EncoderKind k : {EncoderKind::None, EncoderKind::Passthrough, EncoderKind::Fixed, EncoderKind::Mlp,
                        EncoderKind::Cnn, EncoderKind::LstmStateless, EncoderKind::LstmStateful}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown encoder kind '" + std::string(name) + "'");
}

namespace {

template <typename T>
void require_range(const char* field, T v, T lo, T hi) {
  if (!(v >= lo && v <= hi)) {
    throw ConfigError(std::string("encoder.") + field + " = " + std::to_string(v) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

std::vector<std::size_t> mlp_widths(const EncoderConfig& cfg, std::size_t dims) {
  const double in = static_cast<double>(cfg.lookback * dims);
  const double out = static_cast<double>(output_dim(cfg, dims));
  std::vector<std::size_t> widths;
  for (std::size_t i = 1; i <= cfg.mlp_layers; ++i) {
    const double w = in + (out - in) * static_cast<double>(i) / static_cast<double>(cfg.mlp_layers);
    widths.push_back(std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(w))));
  }
  widths.back() = static_cast<std::size_t>(out);
  return widths;
}

std::size_t cnn_channels(const EncoderConfig& cfg, std::size_t layer) {
  const double c = static_cast<double>(cfg.max_channels) * static_cast<double>(layer + 1) /
                   static_cast<double>(cfg.cnn_layers);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(c)));
}

}  // namespace

void EncoderConfig::validate() const {
  if (kind == EncoderKind::None) return;
  require_range<std::size_t>("lookback", lookback, 1, 100);
  require_range("dropout", dropout, 0.0, 0.9);
  switch (kind) {
    case EncoderKind::Mlp:
      require_range<std::size_t>("mlp_layers", mlp_layers, 3, 20);
      require_range("compression", compression, 1.0, 20.0);
      break;
    case EncoderKind::Cnn:
      require_range<std::size_t>("cnn_layers", cnn_layers, 1, 5);
      require_range<std::size_t>("kernel", kernel, 3, 7);
      require_range<std::size_t>("max_channels", max_channels, 1, 20);
      break;
    case EncoderKind::LstmStateless:
    case EncoderKind::LstmStateful:
      require_range<std::size_t>("lstm_layers", lstm_layers, 1, 10);
      break;
    default:
      break;
  }
}

std::size_t lstm_hidden(std::size_t dims) { return std::max<std::size_t>(4, 2 * dims); }

std::size_t output_dim(const EncoderConfig& cfg, std::size_t dims) {
  switch (cfg.kind) {
    case EncoderKind::None: return 0;
    case EncoderKind::Passthrough: return cfg.lookback * dims;
    case EncoderKind::Fixed: return 4 * dims;
    case EncoderKind::Mlp:
      return std::max<std::size_t>(
          2, static_cast<std::size_t>(std::floor(static_cast<double>(cfg.lookback * dims) / cfg.compression)));
    case EncoderKind::Cnn: return cfg.max_channels;
    case EncoderKind::LstmStateless:
    case EncoderKind::LstmStateful: return lstm_hidden(dims);
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<Window> make_windows(const data::Dataset& series, std::size_t k) {
  if (k < 1) throw DataError("lookback must be at least 1");
  if (series.steps <= k) {
    throw DataError("series of length " + std::to_string(series.steps) + " has no windows for k=" + std::to_string(k));
  }
  std::vector<Window> out;
  out.reserve(series.steps - k);
  for (std::size_t t = k; t < series.steps; ++t) {
    Window w;
    w.t = t;
    for (std::size_t j = t - k; j < t; ++j) {
      const auto r = series.row(j);
      w.context.insert(w.context.end(), r.begin(), r.end());
    }
    const auto r = series.row(t);
    w.target.assign(r.begin(), r.end());
    out.push_back(std::move(w));
  }
  return out;
}

std::span<const double> padded_row(const data::Dataset& series, std::ptrdiff_t i) {
  return series.row(i < 0 ? 0 : static_cast<std::size_t>(i));
}

Tensor gather_contexts(const data::Dataset& series, std::span<const std::size_t> targets, std::size_t k) {
  Tensor out({targets.size(), k, series.dims});
  double* dst = out.data();
  for (std::size_t t : targets) {
    if (t >= series.steps) throw DataError("target index " + std::to_string(t) + " outside series");
    for (std::size_t j = 0; j < k; ++j) {
      const auto r = padded_row(series, static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(k - j));
      dst = std::copy(r.begin(), r.end(), dst);
    }
  }
  return out;
}

Tensor gather_targets(const data::Dataset& series, std::span<const std::size_t> targets) {
  Tensor out({targets.size(), series.dims});
  double* dst = out.data();
  for (std::size_t t : targets) {
    if (t >= series.steps) throw DataError("target index " + std::to_string(t) + " outside series");
    const auto r = series.row(t);
    dst = std::copy(r.begin(), r.end(), dst);
  }
  return out;
}

std::vector<double> summarize_context(std::span<const double> context, std::size_t k, std::size_t dims) {
  std::vector<double> out(4 * dims, 0.0);
  for (std::size_t c = 0; c < dims; ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < k; ++j) mean += context[j * dims + c];
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t j = 0; j < k; ++j) var += (context[j * dims + c] - mean) * (context[j * dims + c] - mean);
    var /= static_cast<double>(k);
    const double last = context[(k - 1) * dims + c];
    const double diff = k > 1 ? (last - context[c]) / static_cast<double>(k - 1) : 0.0;
    out[c] = mean;
    out[dims + c] = std::sqrt(var);
    out[2 * dims + c] = last;
    out[3 * dims + c] = diff;
  }
  return out;
}

void StatefulHandle::reset() {
  for (Tensor& x : h) x.fill(0.0);
  for (Tensor& x : c) x.fill(0.0);
  t = 0;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t dims, std::mt19937_64& rng)
    : cfg_(cfg), dims_(dims), out_dim_(cond::output_dim(cfg, dims)) {
  cfg_.validate();
  const std::string prefix = "encoder.";
  switch (cfg.kind) {
    case EncoderKind::Mlp: {
      std::size_t in = cfg.lookback * dims;
      std::size_t i = 0;
      for (std::size_t w : mlp_widths(cfg, dims)) {
        mlp_.emplace_back(store, prefix + "mlp" + std::to_string(i++), in, w, rng);
        in = w;
      }
      break;
    }
    case EncoderKind::Cnn: {
      std::size_t in = dims;
      for (std::size_t i = 0; i < cfg.cnn_layers; ++i) {
        const std::size_t out = i + 1 == cfg.cnn_layers ? cfg.max_channels : cnn_channels(cfg, i);
        cnn_.emplace_back(store, prefix + "conv" + std::to_string(i), in, out, cfg.kernel, rng);
        in = out;
      }
      break;
    }
    case EncoderKind::LstmStateless:
    case EncoderKind::LstmStateful: {
      std::size_t in = dims;
      for (std::size_t i = 0; i < cfg.lstm_layers; ++i) {
        lstm_.emplace_back(store, prefix + "lstm" + std::to_string(i), in, lstm_hidden(dims), rng);
        in = lstm_hidden(dims);
      }
      break;
    }
    default:
      break;
  }
}

Var Encoder::encode(Graph& g, const Tensor& contexts) const {
  if (contexts.rank() != 3 || contexts.dim(1) != cfg_.lookback || contexts.dim(2) != dims_) {
    throw ShapeError("encoder expects contexts [B," + std::to_string(cfg_.lookback) + "," + std::to_string(dims_) +
                     "], got " + diff::shape_str(contexts.shape()));
  }
  const std::size_t batch = contexts.dim(0);
  const std::size_t k = cfg_.lookback;
  switch (cfg_.kind) {
    case EncoderKind::Passthrough:
      return diff::reshape(g.input(contexts), {batch, k * dims_});
    case EncoderKind::Fixed: {
      Tensor w({batch, 4 * dims_});
      for (std::size_t b = 0; b < batch; ++b) {
        const auto s = summarize_context({contexts.data() + b * k * dims_, k * dims_}, k, dims_);
        std::copy(s.begin(), s.end(), w.data() + b * 4 * dims_);
      }
      return g.input(std::move(w));
    }
    case EncoderKind::Mlp: {
      Var h = diff::reshape(g.input(contexts), {batch, k * dims_});
      for (std::size_t i = 0; i < mlp_.size(); ++i) {
        h = mlp_[i](g, h);
        if (i + 1 < mlp_.size()) h = diff::dropout(diff::tanh(h), cfg_.dropout);
      }
      return h;
    }
    case EncoderKind::Cnn: {
      Var h = g.input(contexts);
      for (const auto& conv : cnn_) h = diff::dropout(diff::tanh(conv(g, h)), cfg_.dropout);
      return diff::mean_time(h);
    }
    case EncoderKind::LstmStateless:
      return run_lstm(g, contexts);
    case EncoderKind::None:
    case EncoderKind::LstmStateful:
      break;
  }
  throw GraphError("encode() is not defined for encoder kind " + to_string(cfg_.kind));
}

Var Encoder::run_lstm(Graph& g, const Tensor& contexts) const {
  const std::size_t batch = contexts.dim(0);
  Var seq = g.input(contexts);
  LstmState state = zero_state(g, batch);
  const auto bound = bind_lstm(g);
  Var top;
  for (std::size_t j = 0; j < cfg_.lookback; ++j) top = step_bound(g, bound, diff::time_step(seq, j), state);
  return top;
}

LstmState Encoder::zero_state(Graph& g, std::size_t batch) const {
  LstmState s;
  for (const auto& cell : lstm_) {
    s.h.push_back(g.input(Tensor({batch, cell.hidden()})));
    s.c.push_back(g.input(Tensor({batch, cell.hidden()})));
  }
  return s;
}

std::vector<nn::Lstm::Bound> Encoder::bind_lstm(Graph& g) const {
  std::vector<nn::Lstm::Bound> out;
  for (const auto& cell : lstm_) out.push_back(cell.bind(g));
  return out;
}

Var Encoder::step(Graph& g, Var x_prev, LstmState& state) const { return step_bound(g, bind_lstm(g), x_prev, state); }

Var Encoder::step_bound(Graph& /*g*/, const std::vector<nn::Lstm::Bound>& bound, Var x_prev, LstmState& state) const {
  if (lstm_.empty()) throw GraphError("step() needs an LSTM encoder");
  Var in = x_prev;
  for (std::size_t i = 0; i < lstm_.size(); ++i) {
    if (i > 0) in = diff::dropout(in, cfg_.dropout);
    auto [h, c] = lstm_[i].step(bound[i], in, state.h[i], state.c[i]);
    state.h[i] = h;
    state.c[i] = c;
    in = h;
  }
  return in;
}

StatefulHandle make_handle(const Encoder& enc) {
  if (!enc.stateful()) throw GraphError("stateful handle requested for encoder kind " + to_string(enc.config().kind));
  StatefulHandle handle;
  for (std::size_t i = 0; i < enc.config().lstm_layers; ++i) {
    handle.h.emplace_back(diff::Shape{1, lstm_hidden(enc.dims())});
    handle.c.emplace_back(diff::Shape{1, lstm_hidden(enc.dims())});
  }
  return handle;
}

LstmState load_state(Graph& g, const StatefulHandle& handle) {
  LstmState state;
  for (std::size_t i = 0; i < handle.h.size(); ++i) {
    state.h.push_back(g.input(handle.h[i]));
    state.c.push_back(g.input(handle.c[i]));
  }
  return state;
}

void store_state(Graph& g, const LstmState& state, StatefulHandle& handle) {
  for (std::size_t i = 0; i < state.h.size(); ++i) {
    handle.h[i] = g.eval_pending(state.h[i]);
    handle.c[i] = g.eval_pending(state.c[i]);
  }
}

std::vector<double> encode_stateful(const Encoder& enc, std::span<const double> x_prev, std::size_t prev_index,
                                    StatefulHandle& handle) {
  if (prev_index != handle.t + 1) {
    throw DataError("stateful encoder expected row " + std::to_string(handle.t + 1) + ", got " +
                    std::to_string(prev_index));
  }
  if (x_prev.size() != enc.dims()) throw ShapeError("stateful encoder input has wrong width");
  Graph g;
  LstmState state = load_state(g, handle);
  Var w = enc.step(g, g.input(Tensor({1, enc.dims()}, std::vector<double>(x_prev.begin(), x_prev.end()))), state);
  const Tensor out = g.forward_eval(w);
  store_state(g, state, handle);
  ++handle.t;
  return {out.values().begin(), out.values().end()};
}

}  // namespace tcnf::cond
