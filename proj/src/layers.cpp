// SPDX-License-Identifier: Apache-2.0
#include "tcnf/layers.hpp"

#include <cmath>

namespace tcnf::nn {

void init_uniform(Parameter& p, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value.values()) v = dist(rng);
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng, bool zero_init)
    : in_(in), out_(out) {
  weight_ = &store.create(name + ".weight", {in, out});
  bias_ = &store.create(name + ".bias", {out});
  if (!zero_init) {
    init_uniform(*weight_, in, rng);
    init_uniform(*bias_, in, rng);
  }
}

Var Linear::operator()(Graph& g, Var x) const {
  return diff::add_bias(diff::matmul(x, g.param(*weight_)), g.param(*bias_));
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::mt19937_64& rng)
    : out_(out_channels) {
  weight_ = &store.create(name + ".weight", {out_channels, kernel, in_channels});
  bias_ = &store.create(name + ".bias", {out_channels});
  init_uniform(*weight_, kernel * in_channels, rng);
  init_uniform(*bias_, kernel * in_channels, rng);
}

Var Conv1d::operator()(Graph& g, Var x) const { return diff::conv1d(x, g.param(*weight_), g.param(*bias_)); }

Lstm::Lstm(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
           std::mt19937_64& rng)
    : in_(in), hidden_(hidden) {
  wx_ = &store.create(name + ".wx", {in, 4 * hidden});
  wh_ = &store.create(name + ".wh", {hidden, 4 * hidden});
  bias_ = &store.create(name + ".bias", {4 * hidden});
  init_uniform(*wx_, hidden, rng);
  init_uniform(*wh_, hidden, rng);
}

Lstm::Bound Lstm::bind(Graph& g) const { return {g.param(*wx_), g.param(*wh_), g.param(*bias_)}; }

std::pair<Var, Var> Lstm::step(const Bound& p, Var x, Var h, Var c) const {
  Var hc = diff::lstm_cell(x, h, c, p.wx, p.wh, p.b);
  return {diff::slice_cols(hc, 0, hidden_), diff::slice_cols(hc, hidden_, hidden_)};
}

}  // namespace tcnf::nn
