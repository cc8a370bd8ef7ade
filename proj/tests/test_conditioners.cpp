// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tcnf/conditioners.hpp"
#include "tcnf/error.hpp"
#include "tcnf/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace tcnf;
using namespace tcnf::cond;
using diff::Mode;
using diff::Parameter;

namespace {

data::Dataset ramp(std::size_t steps, std::size_t dims) {
  data::Dataset ds(steps, dims);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t c = 0; c < dims; ++c) ds.at(t, c) = static_cast<double>(10 * (t + 1) + c);
  return ds;
}

Tensor random_contexts(std::size_t batch, std::size_t k, std::size_t dims, std::mt19937_64& rng) {
  Tensor t({batch, k, dims});
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : t.values()) v = u(rng);
  return t;
}

std::vector<Parameter*> all_params(ParameterStore& store) {
  std::vector<Parameter*> out;
  for (auto& p : store) out.push_back(&p);
  return out;
}

EncoderConfig config_for(EncoderKind kind, std::size_t k) {
  EncoderConfig cfg;
  cfg.kind = kind;
  cfg.lookback = k;
  cfg.dropout = 0.3;
  cfg.mlp_layers = 3;
  cfg.compression = 2.0;
  cfg.cnn_layers = 2;
  cfg.kernel = 4;
  cfg.max_channels = 5;
  cfg.lstm_layers = 2;
  return cfg;
}

}  // namespace

TEST_CASE("make_windows") {
  const auto ds = ramp(5, 2);
  const auto w = make_windows(ds, 2);
  REQUIRE(w.size() == 3);
  CHECK(w[0].t == 2);
  CHECK(w[0].context == std::vector<double>{10, 11, 20, 21});
  CHECK(w[0].target == std::vector<double>{30, 31});
  CHECK(make_windows(ds, 4).size() == 1);
  CHECK_THROWS_AS(make_windows(ds, 5), DataError);
  CHECK_THROWS_AS(make_windows(ds, 0), DataError);
  const auto big = ramp(40, 3);
  for (std::size_t k = 1; k < 40; ++k) {
    const auto ws = make_windows(big, k);
    CHECK(ws.size() == 40 - k);
    for (const auto& win : ws) {
      // values encode their row, so the target row must not appear in the context
      for (std::size_t j = 0; j < k; ++j) CHECK(win.context[j * 3] != win.target[0]);
      CHECK(win.context[(k - 1) * 3] == 10.0 * static_cast<double>(win.t));
    }
  }
}

TEST_CASE("gather_contexts pads with the first row") {
  const auto ds = ramp(6, 2);
  const std::vector<std::size_t> targets{0, 1, 4};
  const Tensor c = gather_contexts(ds, targets, 3);
  CHECK(c.shape() == diff::Shape{3, 3, 2});
  for (std::size_t j = 0; j < 3; ++j) CHECK(c(0, j, 0) == 10.0);
  CHECK(c(1, 2, 0) == 10.0);
  CHECK(c(2, 0, 1) == 21.0);
  CHECK(c(2, 2, 0) == 40.0);
  const Tensor x = gather_targets(ds, targets);
  CHECK(x(2, 1) == 51.0);
}

TEST_CASE("encode examples") {
  std::mt19937_64 rng(1);
  ParameterStore store;
  SUBCASE("passthrough flattens") {
    Encoder enc(store, config_for(EncoderKind::Passthrough, 2), 2, rng);
    diff::Graph g;
    const Tensor w = g.forward_eval(enc.encode(g, Tensor({1, 2, 2}, {1, 2, 3, 4})));
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == std::vector<double>{1, 2, 3, 4});
    CHECK(enc.output_dim() == 4);
  }
  SUBCASE("fixed summary of a constant channel") {
    Encoder enc(store, config_for(EncoderKind::Fixed, 4), 2, rng);
    diff::Graph g;
    const Tensor w = g.forward_eval(enc.encode(g, Tensor({1, 4, 2}, {3, 0, 3, 1, 3, 2, 3, 3})));
    CHECK(w(0, 0) == 3.0);
    CHECK(w(0, 2) == 0.0);
    CHECK(w(0, 4) == 3.0);
    CHECK(w(0, 6) == 0.0);
    CHECK(w(0, 1) == 1.5);
    CHECK(w(0, 3) == doctest::Approx(std::sqrt(1.25)));
    CHECK(w(0, 5) == 3.0);
    CHECK(w(0, 7) == 1.0);
  }
  SUBCASE("stateless lstm on zeros with zero biases") {
    Encoder enc(store, config_for(EncoderKind::LstmStateless, 5), 2, rng);
    diff::Graph g;
    const Tensor w = g.forward_eval(enc.encode(g, Tensor({3, 5, 2})));
    CHECK(w.shape() == diff::Shape{3, lstm_hidden(2)});
    for (double v : w.values()) CHECK(v == 0.0);
  }
  SUBCASE("output widths") {
    CHECK(output_dim(config_for(EncoderKind::Mlp, 10), 2) == 10);
    CHECK(output_dim(config_for(EncoderKind::Cnn, 10), 2) == 5);
    CHECK(output_dim(config_for(EncoderKind::None, 10), 2) == 0);
    auto cfg = config_for(EncoderKind::Mlp, 1);
    cfg.compression = 20.0;
    CHECK(output_dim(cfg, 2) == 2);
  }
  SUBCASE("shape mismatch") {
    Encoder enc(store, config_for(EncoderKind::Passthrough, 3), 2, rng);
    diff::Graph g;
    CHECK_THROWS_AS(enc.encode(g, Tensor({1, 2, 2})), ShapeError);
  }
  SUBCASE("bounds") {
    auto cfg = config_for(EncoderKind::Cnn, 3);
    cfg.kernel = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(encoder_kind_from_string("gru"), ConfigError);
  }
}

TEST_CASE("learnable encoders: gradients, determinism, batch permutation") {
  for (EncoderKind kind : {EncoderKind::Mlp, EncoderKind::Cnn, EncoderKind::LstmStateless}) {
    CAPTURE(to_string(kind));
    std::mt19937_64 rng(7);
    ParameterStore store;
    Encoder enc(store, config_for(kind, 5), 2, rng);
    for (auto& p : store) {
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      for (double& v : p.value.values()) v = u(rng);
    }
    const Tensor ctx = random_contexts(4, 5, 2, rng);
    const double err = diff::finite_diff_check(
        [&](diff::Graph& g) { return diff::sum(diff::square(enc.encode(g, ctx))); }, all_params(store), 1e-5);
    CHECK(err < 1e-4);

    diff::Graph g1, g2;
    const Tensor a = g1.forward_eval(enc.encode(g1, ctx));
    const Tensor b = g2.forward_eval(enc.encode(g2, ctx));
    CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
          std::vector<double>(b.values().begin(), b.values().end()));

    const std::size_t perm[4] = {2, 0, 3, 1};
    Tensor shuffled(ctx.shape());
    for (std::size_t i = 0; i < 4; ++i)
      std::copy_n(ctx.data() + perm[i] * 10, 10, shuffled.data() + i * 10);
    diff::Graph g3;
    const Tensor c = g3.forward_eval(enc.encode(g3, shuffled));
    const std::size_t width = enc.output_dim();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < width; ++j) CHECK(c(i, j) == a(perm[i], j));
  }
}

TEST_CASE("stateful encoder") {
  const std::size_t steps = 7;
  std::mt19937_64 data_rng(3);
  const Tensor series = random_contexts(1, steps, 2, data_rng);

  std::mt19937_64 rng_a(11), rng_b(11);
  ParameterStore store_a, store_b;
  Encoder stateful(store_a, config_for(EncoderKind::LstmStateful, 5), 2, rng_a);
  Encoder stateless(store_b, config_for(EncoderKind::LstmStateless, steps), 2, rng_b);
  for (auto& p : store_a) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& v : p.value.values()) v = u(data_rng);
    store_b.find(p.name)->value = p.value;
  }

  SUBCASE("stepwise equals a stateless run over the prefix") {
    StatefulHandle handle = make_handle(stateful);
    std::vector<double> w;
    for (std::size_t t = 0; t < steps; ++t) w = encode_stateful(stateful, {series.data() + 2 * t, 2}, t + 1, handle);
    CHECK(handle.t == steps);
    diff::Graph g;
    const Tensor ref = g.forward_eval(stateless.encode(g, series));
    for (std::size_t j = 0; j < w.size(); ++j) CHECK(w[j] == doctest::Approx(ref[j]).epsilon(1e-14));
  }
  SUBCASE("order is enforced and reset clears state") {
    StatefulHandle handle = make_handle(stateful);
    encode_stateful(stateful, {series.data(), 2}, 1, handle);
    try {
      encode_stateful(stateful, {series.data(), 2}, 3, handle);
      FAIL("expected error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("expected row 2") != std::string::npos);
      CHECK(msg.find("got 3") != std::string::npos);
    }
    handle.reset();
    CHECK(handle.t == 0);
    for (const auto& h : handle.h)
      for (double v : h.values()) CHECK(v == 0.0);
  }
  SUBCASE("two handles agree") {
    StatefulHandle a = make_handle(stateful), b = make_handle(stateful);
    for (std::size_t t = 0; t < steps; ++t) {
      CHECK(encode_stateful(stateful, {series.data() + 2 * t, 2}, t + 1, a) ==
            encode_stateful(stateful, {series.data() + 2 * t, 2}, t + 1, b));
    }
  }
  SUBCASE("graph stepping matches gradients") {
    const double err = diff::finite_diff_check(
        [&](diff::Graph& g) {
          LstmState s = stateful.zero_state(g, 1);
          Var seq = g.input(series);
          Var acc;
          for (std::size_t t = 0; t < steps; ++t) {
            Var w = stateful.step(g, diff::time_step(seq, t), s);
            acc = t == 0 ? diff::sum(diff::square(w)) : acc + diff::sum(diff::square(w));
          }
          return acc;
        },
        all_params(store_a), 1e-5);
    CHECK(err < 1e-4);
  }
}
