// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tcnf/error.hpp"
#include "tcnf/flow.hpp"
#include "tcnf/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace tcnf;
using namespace tcnf::flow;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

ModelConfig small_config(Method method, std::size_t couplings, std::size_t k = 3) {
  ModelConfig cfg = default_config(method);
  cfg.couplings = couplings;
  cfg.conditioner.multiplier = 3.0;
  cfg.conditioner.layers = 3;
  cfg.conditioner.funnel = 1.5;
  cfg.encoder.lookback = k;
  cfg.encoder.mlp_layers = 3;
  cfg.encoder.cnn_layers = 2;
  cfg.encoder.max_channels = 4;
  return cfg;
}

void randomize(FlowModel& model, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : model.params())
    for (double& v : p.value.values()) v = u(rng);
}

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t({r, c});
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

Tensor random_contexts(std::size_t b, std::size_t k, std::size_t d, std::mt19937_64& rng) {
  Tensor t({b, k, d});
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// One D=2 unconditioned coupling with the head forced to constant (s, t).
FlowModel constant_coupling(std::size_t dims, const std::vector<double>& s, const std::vector<double>& t,
                            std::size_t couplings = 1) {
  FlowModel m(small_config(Method::RealNvp, couplings), dims, 1);
  for (const auto& layer : m.layers()) {
    layer.head_weight().value.fill(0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      layer.head_bias().value[i] = std::atanh(s[i]);
      layer.head_bias().value[s.size() + i] = t[i];
    }
  }
  return m;
}

std::vector<double> as_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("coupling examples") {
  SUBCASE("zero head is the identity") {
    FlowModel m(small_config(Method::RealNvp, 1), 4, 3);
    diff::Graph g;
    const Tensor u = Tensor::matrix(1, 4, {0.3, -1.0, 2.0, 0.5});
    const Pass p = m.layers()[0].forward(g, g.input(u), std::nullopt);
    CHECK(as_vec(g.forward_eval(p.out)) == as_vec(u));
    CHECK(g.forward_eval(p.logdet)[0] == 0.0);
  }
  SUBCASE("hand example s = ln 2, t = 1") {
    FlowModel m = constant_coupling(2, {std::log(2.0)}, {1.0});
    diff::Graph g;
    const Pass f = m.layers()[0].forward(g, g.input(Tensor::matrix(1, 2, {0.0, 1.0})), std::nullopt);
    const Tensor x = g.forward_eval(f.out);
    CHECK(x[0] == 0.0);
    CHECK(x[1] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(g.forward_eval(f.logdet)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    const Pass inv = m.layers()[0].inverse(g, g.input(Tensor::matrix(1, 2, {0.0, 3.0})), std::nullopt);
    const Tensor u = g.forward_eval(inv.out);
    CHECK(u[0] == 0.0);
    CHECK(u[1] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.forward_eval(inv.logdet)[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("opposite scales cancel in the log-determinant") {
    FlowModel m = constant_coupling(4, {0.5, -0.5}, {0.0, 0.0});
    diff::Graph g;
    const Pass f = m.layers()[0].forward(g, g.input(Tensor::matrix(1, 4, {1, 2, 3, 4})), std::nullopt);
    CHECK(std::abs(g.forward_eval(f.logdet)[0]) < 1e-15);
  }
  SUBCASE("context width is checked") {
    FlowModel m(small_config(Method::TcnfBase, 2, 2), 2, 3);
    diff::Graph g;
    CHECK_THROWS_AS(m.log_prob(g, g.input(Tensor({1, 2})), std::nullopt), ShapeError);
  }
}

TEST_CASE("gaussian log density") {
  CHECK(gaussian_log_density(std::vector<double>{0.0, 0.0}) == doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(gaussian_log_density(std::vector<double>{0.0}) == doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(gaussian_log_density(std::vector<double>{1.0, -1.0}) == doctest::Approx(-kLog2Pi - 1.0).epsilon(1e-14));
}

TEST_CASE("flow log-likelihood") {
  SUBCASE("identity flow equals the base density") {
    FlowModel m(small_config(Method::RealNvp, 3), 2, 5);
    diff::Graph g;
    const Tensor x = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, -1.0});
    const Tensor lp = g.forward_eval(m.log_prob(g, g.input(x), std::nullopt));
    CHECK(lp[0] == doctest::Approx(-kLog2Pi).epsilon(1e-14));
    CHECK(lp[1] == doctest::Approx(-kLog2Pi - 1.0).epsilon(1e-14));
  }
  SUBCASE("two swapped layers scaling each half by 2") {
    FlowModel m = constant_coupling(2, {std::log(2.0)}, {0.0}, 2);
    diff::Graph g;
    const Tensor x = Tensor::matrix(1, 2, {0.8, -0.6});
    Pass pass;
    const double lp = g.forward_eval(m.log_prob(g, g.input(x), std::nullopt, &pass))[0];
    const Tensor u = g.forward_eval(pass.out);
    // the last inverse step leaves the halves in swapped order
    CHECK(u[0] == doctest::Approx(-0.3).epsilon(1e-14));
    CHECK(u[1] == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(lp == doctest::Approx(gaussian_log_density(as_vec(u)) - 2.0 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("nll loss") {
    FlowModel m(small_config(Method::RealNvp, 2), 2, 5);
    diff::Graph g;
    CHECK(g.forward_eval(nll_loss(m, g, Tensor({1, 2}), std::nullopt)).item() ==
          doctest::Approx(kLog2Pi).epsilon(1e-14));
    CHECK(g.forward_eval(nll_loss(m, g, Tensor::matrix(1, 2, {1.0, 1.0}), std::nullopt)).item() ==
          doctest::Approx(kLog2Pi + 1.0).epsilon(1e-14));
    std::mt19937_64 rng(2);
    randomize(m, rng, 0.5);
    const Tensor x = random_matrix(5, 2, rng);
    Tensor twice({10, 2});
    std::copy_n(x.data(), 10, twice.data());
    std::copy_n(x.data(), 10, twice.data() + 10);
    CHECK(g.forward_eval(nll_loss(m, g, twice, std::nullopt)).item() ==
          doctest::Approx(g.forward_eval(nll_loss(m, g, x, std::nullopt)).item()).epsilon(1e-14));
    CHECK_THROWS_AS(nll_loss(m, g, Tensor({0, 2}), std::nullopt), ShapeError);
  }
  SUBCASE("non-finite values name the layer") {
    FlowModel m(small_config(Method::RealNvp, 3), 2, 5);
    m.params().find("coupling1.hidden0.weight")->value[0] = std::numeric_limits<double>::quiet_NaN();
    diff::Graph g;
    Pass pass;
    Var lp = m.log_prob(g, g.input(Tensor::matrix(1, 2, {0.5, 0.5})), std::nullopt, &pass);
    try {
      eval_checked(g, lp, pass);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("coupling layer 1") != std::string::npos);
    }
  }
}

TEST_CASE("invertibility and log-determinant consistency") {
  std::mt19937_64 rng(21);
  for (std::size_t dims : {2, 4, 8}) {
    for (Method method : {Method::RealNvp, Method::TcnfBase, Method::TcnfMlp}) {
      FlowModel m(small_config(method, 4), dims, rng());
      randomize(m, rng, 0.6);
      for (int trial = 0; trial < 5; ++trial) {
        const Tensor u = random_matrix(6, dims, rng, 1.5);
        diff::Graph g;
        const auto w = m.encode(g, random_contexts(6, 3, dims, rng));
        const Pass fwd = m.forward(g, g.input(u), w);
        const Pass inv = m.inverse(g, fwd.out, w);
        const Tensor back = g.forward_eval(inv.out);
        for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(back[i] - u[i]) <= 1e-6);
        const Tensor ld_f = g.forward_eval(fwd.logdet);
        const Tensor ld_i = g.forward_eval(inv.logdet);
        for (std::size_t i = 0; i < 6; ++i) CHECK(ld_f[i] == doctest::Approx(-ld_i[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("scale is bounded by the cap") {
  FlowModel m(small_config(Method::RealNvp, 1), 4, 9);
  const auto& layer = m.layers()[0];
  layer.head_bias().value.fill(1e6);
  layer.scale_cap().value = Tensor::vector({0.7, -2.0});
  diff::Graph g;
  auto [s, t] = layer.scale_shift(g, g.input(Tensor::matrix(1, 2, {100.0, -100.0})), std::nullopt);
  const Tensor sv = g.forward_eval(s);
  CHECK(std::abs(sv[0]) <= 0.7);
  CHECK(std::abs(sv[1]) <= 2.0);
}

TEST_CASE("loss gradients match finite differences") {
  for (Method method : {Method::RealNvp, Method::TcnfBase, Method::TcnfFixed, Method::TcnfMlp, Method::TcnfCnn,
                        Method::TcnfStateless}) {
    CAPTURE(to_string(method));
    std::mt19937_64 rng(31);
    FlowModel m(small_config(method, 2), 2, 4);
    // small weights leave some LSTM entries near 1e-8, below the roundoff floor of the oracle
    randomize(m, rng, 1.0);
    const Tensor x = random_matrix(4, 2, rng);
    const Tensor ctx = random_contexts(4, 3, 2, rng);
    std::vector<diff::Parameter*> params;
    for (auto& p : m.params()) params.push_back(&p);
    const double err = diff::finite_diff_check(
        [&](diff::Graph& g) { return nll_loss(m, g, x, m.encode(g, ctx)); }, params, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("sampling") {
  SUBCASE("identity model samples the base") {
    FlowModel m(small_config(Method::RealNvp, 2), 2, 1);
    std::mt19937_64 rng(4);
    const Tensor x = sample(m, std::nullopt, 10000, rng);
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < 10000; ++i) {
        mean += x(i, c);
        sq += x(i, c) * x(i, c);
      }
      mean /= 10000.0;
      CHECK(std::abs(mean) < 4.0 / 100.0);
      CHECK(std::abs(sq / 10000.0 - 1.0) < 0.06);
    }
  }
  SUBCASE("seeded, finite, and invertible") {
    std::mt19937_64 prng(8);
    FlowModel m(small_config(Method::TcnfBase, 3), 4, 2);
    randomize(m, prng, 0.5);
    const Tensor ctx = random_contexts(50, 3, 4, prng);
    diff::Graph g0;
    const Tensor w = g0.forward_eval(*m.encode(g0, ctx));
    std::mt19937_64 r1(99), r2(99);
    const Tensor a = sample(m, w, 50, r1);
    const Tensor b = sample(m, w, 50, r2);
    CHECK(as_vec(a) == as_vec(b));
    diff::Graph g;
    Pass pass;
    const Tensor lp = eval_checked(g, m.log_prob(g, g.input(a), g.input(w), &pass), pass);
    for (double v : lp.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("density of a random small model integrates to one") {
  std::mt19937_64 rng(12);
  FlowModel m(small_config(Method::RealNvp, 4), 2, 3);
  randomize(m, rng, 0.3);
  const double lo = -10.0, hi = 10.0;
  const std::size_t n = 400;
  const double h = (hi - lo) / static_cast<double>(n);
  Tensor grid({n * n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      grid(i * n + j, 0) = lo + (static_cast<double>(i) + 0.5) * h;
      grid(i * n + j, 1) = lo + (static_cast<double>(j) + 0.5) * h;
    }
  }
  diff::Graph g;
  const Tensor lp = g.forward_eval(m.log_prob(g, g.input(grid), std::nullopt));
  double mass = 0.0;
  for (double v : lp.values()) mass += std::exp(v) * h * h;
  CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("configuration checks") {
  CHECK_THROWS_AS(FlowModel(small_config(Method::RealNvp, 2), 3, 0), ShapeError);
  auto cfg = small_config(Method::TcnfBase, 2);
  cfg.encoder.kind = cond::EncoderKind::Mlp;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Method::TcnfBase, 2);
  cfg.conditioner.multiplier = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(conditioner_widths({4.0, 3, 0.1, 2.0}, 2) == std::vector<std::size_t>{8, 4, 2});
  CHECK(conditioner_widths({1.0, 4, 0.1, 10.0}, 2) == std::vector<std::size_t>{2, 2, 2, 2});
  for (Method mth : {Method::RealNvp, Method::TcnfBase, Method::TcnfFixed, Method::TcnfMlp, Method::TcnfCnn,
                     Method::TcnfStateless, Method::TcnfStateful})
    CHECK(method_from_string(to_string(mth)) == mth);
}
