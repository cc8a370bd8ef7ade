// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/conditioners.hpp"
#include "tcnf/data.hpp"
#include "tcnf/graph.hpp"
#include "tcnf/layers.hpp"

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tcnf::flow {

using diff::Graph;
using diff::Parameter;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

enum class Method { RealNvp, TcnfBase, TcnfFixed, TcnfMlp, TcnfCnn, TcnfStateless, TcnfStateful };

std::string to_string(Method method);
Method method_from_string(std::string_view name);
cond::EncoderKind encoder_kind_for(Method method);

/// Hyperparameters of the network producing scale and shift inside a coupling.
struct ConditionerConfig {
  double multiplier = 4.0;
  std::size_t layers = 3;
  double dropout = 0.1;
  double funnel = 2.0;

  void validate() const;
};

/// Hidden widths for D channels: floor(multiplier·D), then each divided by
/// the funnel factor, never below 2.
std::vector<std::size_t> conditioner_widths(const ConditionerConfig& cfg, std::size_t dims);

struct ModelConfig {
  Method method = Method::TcnfBase;
  std::size_t couplings = 4;
  ConditionerConfig conditioner;
  cond::EncoderConfig encoder;

  /// Checks every bound and that encoder.kind matches the method.
  void validate() const;
};

/// Config for `method` with encoder.kind set to match.
ModelConfig default_config(Method method);

/// Result of pushing a batch through one or more coupling layers.
struct Pass {
  Var out;
  Var logdet;               // [B]
  std::vector<Var> trace;            // output of each layer in application order
  std::vector<std::size_t> layers;   // coupling index of each trace entry
};

/// Affine coupling: the second half is scaled by exp(s) and shifted by t,
/// both computed from the first half and the context.
/// s = cap ⊙ tanh(raw) keeps |s| bounded by the learnable per-feature cap.
class CouplingLayer {
 public:
  CouplingLayer(ParameterStore& store, const std::string& name, std::size_t dims, std::size_t context_dim,
                const ConditionerConfig& cfg, std::mt19937_64& rng);

  /// (s, t), each [B, D-d].
  std::pair<Var, Var> scale_shift(Graph& g, Var first, std::optional<Var> w) const;
  Pass forward(Graph& g, Var u, std::optional<Var> w) const;
  Pass inverse(Graph& g, Var x, std::optional<Var> w) const;

  std::size_t dims() const noexcept { return dims_; }
  std::size_t split() const noexcept { return dims_ / 2; }
  Parameter& scale_cap() const { return *cap_; }
  Parameter& head_weight() const { return *head_weight_; }
  Parameter& head_bias() const { return *head_bias_; }

 private:
  std::size_t dims_ = 0;
  std::size_t context_dim_ = 0;
  double dropout_ = 0.0;
  std::vector<nn::Linear> hidden_;
  nn::Linear head_;
  Parameter* cap_ = nullptr;
  Parameter* head_weight_ = nullptr;
  Parameter* head_bias_ = nullptr;
};

/// log N(u; 0, I).
double gaussian_log_density(std::span<const double> u);
/// Row-wise log N(u; 0, I) for u[B, dims] → [B].
Var gaussian_log_density(Var u, std::size_t dims);

/// Stack of coupling layers sharing one context encoder. Owns all parameters.
class FlowModel {
 public:
  FlowModel(const ModelConfig& cfg, std::size_t dims, std::uint64_t seed);
  FlowModel(FlowModel&&) noexcept = default;
  FlowModel& operator=(FlowModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t context_dim() const noexcept { return encoder_.output_dim(); }
  std::size_t lookback() const noexcept { return cfg_.encoder.context_length(); }
  std::uint64_t seed() const noexcept { return seed_; }
  ParameterStore& params() noexcept { return *store_; }
  const ParameterStore& params() const noexcept { return *store_; }
  const cond::Encoder& encoder() const noexcept { return encoder_; }
  const std::vector<CouplingLayer>& layers() const noexcept { return layers_; }

  /// w for a batch of contexts [B, k, D]; empty for the unconditioned model.
  std::optional<Var> encode(Graph& g, const Tensor& contexts) const;
  /// x → latent with the summed log-determinant of the inverse direction.
  Pass inverse(Graph& g, Var x, std::optional<Var> w) const;
  /// latent → x with the summed log-determinant of the forward direction.
  Pass forward(Graph& g, Var u, std::optional<Var> w) const;
  /// Row-wise conditional log-likelihood [B].
  Var log_prob(Graph& g, Var x, std::optional<Var> w, Pass* pass = nullptr) const;

  std::optional<data::NormStats> norm_stats;
  std::string id;

 private:
  ModelConfig cfg_;
  std::size_t dims_ = 0;
  std::uint64_t seed_ = 0;
  std::unique_ptr<ParameterStore> store_;
  cond::Encoder encoder_;
  std::vector<CouplingLayer> layers_;
};

/// Evaluates `root` (keeping values already computed in `g`) and, if anything
/// in the pass is non-finite, throws a NumericError naming the first offending
/// layer.
const Tensor& eval_checked(Graph& g, Var root, const Pass& pass);

/// Mean negative log-likelihood of a batch; the training objective.
Var nll_loss(const FlowModel& model, Graph& g, const Tensor& x, std::optional<Var> w, Pass* pass = nullptr);

/// Draws `count` samples x = F(u), u ~ N(0, I). `w` is [count, L] or empty.
Tensor sample(const FlowModel& model, const std::optional<Tensor>& w, std::size_t count, std::mt19937_64& rng);

}  // namespace tcnf::flow
