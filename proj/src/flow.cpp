// SPDX-License-Identifier: Apache-2.0
#include "tcnf/flow.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tcnf::flow {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Var swap_halves(Var v, std::size_t d) { return diff::concat_cols({diff::slice_cols(v, d, d), diff::slice_cols(v, 0, d)}); }

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::RealNvp: return "realnvp";
    case Method::TcnfBase: return "tcnf-base";
    case Method::TcnfFixed: return "tcnf-fixed";
    case Method::TcnfMlp: return "tcnf-mlp";
    case Method::TcnfCnn: return "tcnf-cnn";
    case Method::TcnfStateless: return "tcnf-stateless";
    case Method::TcnfStateful: return "tcnf-stateful";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::RealNvp, Method::TcnfBase, Method::TcnfFixed, Method::TcnfMlp, Method::TcnfCnn,
                   Method::TcnfStateless, Method::TcnfStateful}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

cond::EncoderKind encoder_kind_for(Method method) {
  switch (method) {
    case Method::RealNvp: return cond::EncoderKind::None;
    case Method::TcnfBase: return cond::EncoderKind::Passthrough;
    case Method::TcnfFixed: return cond::EncoderKind::Fixed;
    case Method::TcnfMlp: return cond::EncoderKind::Mlp;
    case Method::TcnfCnn: return cond::EncoderKind::Cnn;
    case Method::TcnfStateless: return cond::EncoderKind::LstmStateless;
    case Method::TcnfStateful: return cond::EncoderKind::LstmStateful;
  }
  return cond::EncoderKind::None;
}

void ConditionerConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("conditioner." + what); };
  if (!(multiplier >= 1.0 && multiplier <= 50.0)) fail("multiplier = " + std::to_string(multiplier) + " outside [1, 50]");
  if (layers < 3 || layers > 8) fail("layers = " + std::to_string(layers) + " outside [3, 8]");
  if (!(dropout >= 0.1 && dropout <= 0.9)) fail("dropout = " + std::to_string(dropout) + " outside [0.1, 0.9]");
  if (!(funnel >= 1.0 && funnel <= 10.0)) fail("funnel = " + std::to_string(funnel) + " outside [1, 10]");
}

std::vector<std::size_t> conditioner_widths(const ConditionerConfig& cfg, std::size_t dims) {
  std::vector<std::size_t> widths;
  double w = std::floor(cfg.multiplier * static_cast<double>(dims));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    widths.push_back(std::max<std::size_t>(2, static_cast<std::size_t>(w)));
    w = std::floor(static_cast<double>(widths.back()) / cfg.funnel);
  }
  return widths;
}

void ModelConfig::validate() const {
  if (couplings < 1 || couplings > 20) {
    throw ConfigError("flow.couplings = " + std::to_string(couplings) + " outside [1, 20]");
  }
  if (encoder.kind != encoder_kind_for(method)) {
    throw ConfigError("encoder kind " + cond::to_string(encoder.kind) + " does not match method " + to_string(method));
  }
  conditioner.validate();
  encoder.validate();
}

ModelConfig default_config(Method method) {
  ModelConfig cfg;
  cfg.method = method;
  cfg.encoder.kind = encoder_kind_for(method);
  return cfg;
}

// ---------------------------------------------------------------------------

CouplingLayer::CouplingLayer(ParameterStore& store, const std::string& name, std::size_t dims,
                             std::size_t context_dim, const ConditionerConfig& cfg, std::mt19937_64& rng)
    : dims_(dims), context_dim_(context_dim), dropout_(cfg.dropout) {
  if (dims < 2 || dims % 2 != 0) throw ShapeError("coupling layer needs an even D >= 2, got " + std::to_string(dims));
  std::size_t in = split() + context_dim;
  std::size_t i = 0;
  for (std::size_t w : conditioner_widths(cfg, dims)) {
    hidden_.emplace_back(store, name + ".hidden" + std::to_string(i++), in, w, rng);
    in = w;
  }
  head_ = nn::Linear(store, name + ".head", in, 2 * (dims - split()), rng, true);
  head_weight_ = store.find(name + ".head.weight");
  head_bias_ = store.find(name + ".head.bias");
  cap_ = &store.create(name + ".scale_cap", {dims - split()});
  cap_->value.fill(1.0);
}

std::pair<Var, Var> CouplingLayer::scale_shift(Graph& g, Var first, std::optional<Var> w) const {
  const std::size_t half = dims_ - split();
  if (w.has_value() != (context_dim_ > 0)) {
    throw ShapeError("coupling layer built for context width " + std::to_string(context_dim_) +
                     (w ? " received a context" : " received none"));
  }
  Var h = w ? diff::concat_cols({first, *w}) : first;
  for (const auto& layer : hidden_) h = diff::dropout(diff::tanh(layer(g, h)), dropout_);
  Var raw = head_(g, h);
  Var s = diff::mul_row(diff::tanh(diff::slice_cols(raw, 0, half)), g.param(*cap_));
  return {s, diff::slice_cols(raw, half, half)};
}

Pass CouplingLayer::forward(Graph& g, Var u, std::optional<Var> w) const {
  const std::size_t d = split();
  Var first = diff::slice_cols(u, 0, d);
  auto [s, t] = scale_shift(g, first, w);
  Var second = diff::slice_cols(u, d, dims_ - d) * diff::exp(s) + t;
  Pass p;
  p.out = diff::concat_cols({first, second});
  p.logdet = diff::row_sum(s);
  return p;
}

Pass CouplingLayer::inverse(Graph& g, Var x, std::optional<Var> w) const {
  const std::size_t d = split();
  Var first = diff::slice_cols(x, 0, d);
  auto [s, t] = scale_shift(g, first, w);
  Var second = (diff::slice_cols(x, d, dims_ - d) - t) * diff::exp(-s);
  Pass p;
  p.out = diff::concat_cols({first, second});
  p.logdet = -diff::row_sum(s);
  return p;
}

double gaussian_log_density(std::span<const double> u) {
  double sq = 0.0;
  for (double v : u) sq += v * v;
  return -0.5 * static_cast<double>(u.size()) * kLog2Pi - 0.5 * sq;
}

Var gaussian_log_density(Var u, std::size_t dims) {
  return diff::shift(diff::scale(diff::row_sum(diff::square(u)), -0.5), -0.5 * static_cast<double>(dims) * kLog2Pi);
}

// ---------------------------------------------------------------------------

FlowModel::FlowModel(const ModelConfig& cfg, std::size_t dims, std::uint64_t seed)
    : cfg_(cfg), dims_(dims), seed_(seed), store_(std::make_unique<ParameterStore>()) {
  cfg_.validate();
  if (dims < 2 || dims % 2 != 0) throw ShapeError("flow needs an even channel count, got D=" + std::to_string(dims));
  std::mt19937_64 rng(seed);
  encoder_ = cond::Encoder(*store_, cfg_.encoder, dims, rng);
  for (std::size_t i = 0; i < cfg_.couplings; ++i) {
    layers_.emplace_back(*store_, "coupling" + std::to_string(i), dims, encoder_.output_dim(), cfg_.conditioner, rng);
  }
  id = to_string(cfg_.method) + "-" + std::to_string(seed);
}

std::optional<Var> FlowModel::encode(Graph& g, const Tensor& contexts) const {
  if (!encoder_.conditioned()) return std::nullopt;
  return encoder_.encode(g, contexts);
}

Pass FlowModel::forward(Graph& g, Var u, std::optional<Var> w) const {
  const std::size_t n = layers_.size();
  Pass total;
  Var cur = u;
  for (std::size_t i = 0; i < n; ++i) {
    Pass p = layers_[i].forward(g, cur, w);
    total.logdet = i == 0 ? p.logdet : total.logdet + p.logdet;
    cur = i + 1 < n ? swap_halves(p.out, dims_ / 2) : p.out;
    total.trace.push_back(p.out);
    total.layers.push_back(i);
  }
  total.out = cur;
  return total;
}

Pass FlowModel::inverse(Graph& g, Var x, std::optional<Var> w) const {
  const std::size_t n = layers_.size();
  Pass total;
  Var cur = x;
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n) cur = swap_halves(cur, dims_ / 2);
    Pass p = layers_[i].inverse(g, cur, w);
    total.logdet = i + 1 == n ? p.logdet : total.logdet + p.logdet;
    cur = p.out;
    total.trace.push_back(p.out);
    total.layers.push_back(i);
  }
  total.out = cur;
  return total;
}

Var FlowModel::log_prob(Graph& g, Var x, std::optional<Var> w, Pass* pass) const {
  Pass p = inverse(g, x, w);
  Var lp = gaussian_log_density(p.out, dims_) + p.logdet;
  if (pass) *pass = std::move(p);
  return lp;
}

const Tensor& eval_checked(Graph& g, Var root, const Pass& pass) {
  const Tensor& out = g.eval_pending(root);
  if (all_finite(out)) return out;
  for (std::size_t i = 0; i < pass.trace.size(); ++i) {
    if (!all_finite(g.eval_pending(pass.trace[i]))) {
      throw NumericError("non-finite value produced by coupling layer " + std::to_string(pass.layers[i]));
    }
  }
  const std::size_t last = pass.layers.empty() ? 0 : pass.layers.back();
  throw NumericError("non-finite log-likelihood after coupling layer " + std::to_string(last));
}

Var nll_loss(const FlowModel& model, Graph& g, const Tensor& x, std::optional<Var> w, Pass* pass) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("nll_loss needs a nonempty [B, D] batch");
  return -diff::mean(model.log_prob(g, g.input(x), w, pass));
}

Tensor sample(const FlowModel& model, const std::optional<Tensor>& w, std::size_t count, std::mt19937_64& rng) {
  Tensor u({count, model.dims()});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : u.values()) v = normal(rng);
  Graph g;
  std::optional<Var> wv;
  if (w) wv = g.input(*w);
  const Pass p = model.forward(g, g.input(u), wv);
  return eval_checked(g, p.out, p);
}

}  // namespace tcnf::flow
