// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/data.hpp"
#include "tcnf/graph.hpp"
#include "tcnf/layers.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace tcnf::cond {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

enum class EncoderKind { None, Passthrough, Fixed, Mlp, Cnn, LstmStateless, LstmStateful };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(std::string_view name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Passthrough;
  std::size_t lookback = 10;
  double dropout = 0.1;
  // mlp
  std::size_t mlp_layers = 3;
  double compression = 2.0;
  // cnn
  std::size_t cnn_layers = 2;
  std::size_t kernel = 3;
  std::size_t max_channels = 8;
  // lstm
  std::size_t lstm_layers = 1;

  /// Throws ConfigError when a field is outside its search range.
  void validate() const;
  /// History length actually read; zero for the unconditioned baseline.
  std::size_t context_length() const { return kind == EncoderKind::None ? 0 : lookback; }
};

/// Width of w for D input channels.
std::size_t output_dim(const EncoderConfig& cfg, std::size_t dims);
/// Hidden size used by both LSTM encoders.
std::size_t lstm_hidden(std::size_t dims);

/// One training example: 0-based target index with its k preceding rows.
struct Window {
  std::size_t t = 0;
  std::vector<double> context;  // k×D, oldest row first
  std::vector<double> target;   // D
};

/// Windows for every target t in [k, T) (0-based). Requires T > k >= 1.
std::vector<Window> make_windows(const data::Dataset& series, std::size_t k);

/// Row i of the series with indices before the start clamped to row 0.
std::span<const double> padded_row(const data::Dataset& series, std::ptrdiff_t i);
/// [B, k, D] contexts for the given targets, left-padded with the first row.
Tensor gather_contexts(const data::Dataset& series, std::span<const std::size_t> targets, std::size_t k);
/// [B, D] target rows.
Tensor gather_targets(const data::Dataset& series, std::span<const std::size_t> targets);

/// Plain-code summary used by the fixed encoder: per channel mean, population
/// std, last value and mean first difference, laid out as four D-blocks.
std::vector<double> summarize_context(std::span<const double> context, std::size_t k, std::size_t dims);

/// Per-layer recurrent state as graph values.
struct LstmState {
  std::vector<Var> h;
  std::vector<Var> c;
};

/// Recurrent state carried between calls of encode_stateful.
struct StatefulHandle {
  std::vector<Tensor> h;
  std::vector<Tensor> c;
  /// 1-based index of the last consumed row; 0 before any input.
  std::size_t t = 0;

  void reset();
};

/// Context encoder producing w from the history. All parameters live in the
/// store passed at construction.
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t dims, std::mt19937_64& rng);

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t output_dim() const noexcept { return out_dim_; }
  bool conditioned() const noexcept { return cfg_.kind != EncoderKind::None; }
  bool stateful() const noexcept { return cfg_.kind == EncoderKind::LstmStateful; }

  /// contexts[B, k, D] → w[B, L]. Not valid for the stateful or unconditioned kinds.
  Var encode(Graph& g, const Tensor& contexts) const;

  /// Stateful path: consumes x_prev[B, D] and returns the new top hidden state.
  LstmState zero_state(Graph& g, std::size_t batch) const;
  Var step(Graph& g, Var x_prev, LstmState& state) const;
  /// Binds the LSTM weights once so a multi-step graph reuses the same nodes.
  std::vector<nn::Lstm::Bound> bind_lstm(Graph& g) const;
  Var step_bound(Graph& g, const std::vector<nn::Lstm::Bound>& bound, Var x_prev, LstmState& state) const;

 private:
  Var run_lstm(Graph& g, const Tensor& contexts) const;

  EncoderConfig cfg_;
  std::size_t dims_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<nn::Linear> mlp_;
  std::vector<nn::Conv1d> cnn_;
  std::vector<nn::Lstm> lstm_;
};

StatefulHandle make_handle(const Encoder& enc);
/// Starts a graph from the carried state; gradients do not flow past it.
LstmState load_state(Graph& g, const StatefulHandle& handle);
/// Evaluates `state` and copies its values into the handle.
void store_state(Graph& g, const LstmState& state, StatefulHandle& handle);

/// Advances the handle by one row. `prev_index` is the 1-based index of
/// x_prev and must equal handle.t + 1. Returns w of length L.
std::vector<double> encode_stateful(const Encoder& enc, std::span<const double> x_prev, std::size_t prev_index,
                                    StatefulHandle& handle);

}  // namespace tcnf::cond
