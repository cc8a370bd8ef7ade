// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/graph.hpp"

#include <random>
#include <string>
#include <utility>

namespace tcnf::nn {

using diff::Graph;
using diff::Parameter;
using diff::ParameterStore;
using diff::Var;

/// Fills with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Parameter& p, std::size_t fan_in, std::mt19937_64& rng);

/// y = x W + b, W stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool zero_init = false);

  Var operator()(Graph& g, Var x) const;
  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Temporal convolution over [n, T, C] with "same" output length.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::mt19937_64& rng);

  Var operator()(Graph& g, Var x) const;
  std::size_t out_channels() const noexcept { return out_; }

 private:
  std::size_t out_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Single LSTM layer. Biases start at zero.
class Lstm {
 public:
  struct Bound {
    Var wx, wh, b;
  };

  Lstm() = default;
  Lstm(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::mt19937_64& rng);

  Bound bind(Graph& g) const;
  /// Returns (h', c').
  std::pair<Var, Var> step(const Bound& p, Var x, Var h, Var c) const;
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t in() const noexcept { return in_; }

  Parameter& bias() const { return *bias_; }

 private:
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  Parameter* wx_ = nullptr;
  Parameter* wh_ = nullptr;
  Parameter* bias_ = nullptr;
};

}  // namespace tcnf::nn
