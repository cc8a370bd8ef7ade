// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tcnf/error.hpp"
#include "tcnf/hyperopt.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace tcnf;
using namespace tcnf::hpo;

namespace {

double sphere(const std::vector<double>& v, const std::vector<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += (v[i] - target[i]) * (v[i] - target[i]);
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

data::Dataset labeled_sine(std::size_t T, std::uint64_t seed) {
  auto ds = data::generate_synthetic({data::Family::Sine, T, 2, 0.02, 1.0, 30.0, seed});
  data::AnomalySpec spike;
  spike.kind = data::AnomalyKind::Spike;
  spike.start = T / 2;
  spike.length = 1;
  spike.magnitude = 3.0;
  return data::inject_anomaly(ds, spike, seed);
}

}  // namespace

TEST_CASE("population size") {
  CHECK(default_population(10) == 10);
  CHECK(default_population(5) == 8);
  CHECK(default_population(1) == 4);
}

TEST_CASE("decode maps the unit box onto the search ranges") {
  for (auto method : {flow::Method::RealNvp, flow::Method::TcnfBase, flow::Method::TcnfMlp, flow::Method::TcnfCnn,
                      flow::Method::TcnfStateless, flow::Method::TcnfStateful}) {
    const auto space = search_space(method);
    space.validate();
    const std::vector<double> zeros(space.size(), 0.0), ones(space.size(), 1.0);
    const auto lo = decode(zeros, space), hi = decode(ones, space);
    for (std::size_t i = 0; i < space.size(); ++i) {
      CHECK(lo[i].second == space.params[i].lower);
      CHECK(hi[i].second == space.params[i].upper);
    }
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> x(space.size());
      for (double& v : x) v = u(rng);
      const auto a = decode(x, space);
      for (std::size_t i = 0; i < space.size(); ++i) {
        CHECK(a[i].second >= space.params[i].lower);
        CHECK(a[i].second <= space.params[i].upper);
        if (space.params[i].kind == ParamKind::Integer) CHECK(a[i].second == std::floor(a[i].second));
      }
      // every decoded point is a valid model configuration
      CHECK_NOTHROW(apply_assignment(a, flow::default_config(method)).validate());
    }
  }
  const auto space = search_space(flow::Method::RealNvp);
  std::vector<double> half(space.size(), 0.5);
  CHECK(decode(half, space)[0].first == "flow.couplings");
  CHECK(decode(half, space)[0].second == 12.0);
  CHECK(search_space(flow::Method::TcnfBase, 100).params.back().upper == 100.0);
}

TEST_CASE("assignment routes encoder layers by kind") {
  auto cfg = apply_assignment({{"encoder.layers", 4}}, flow::default_config(flow::Method::TcnfCnn));
  CHECK(cfg.encoder.cnn_layers == 4);
  cfg = apply_assignment({{"encoder.layers", 7}}, flow::default_config(flow::Method::TcnfStateful));
  CHECK(cfg.encoder.lstm_layers == 7);
  CHECK_THROWS_AS(apply_assignment({{"encoder.layers", 2}}, flow::default_config(flow::Method::TcnfBase)),
                  ConfigError);
  CHECK_THROWS_AS(apply_assignment({{"bogus", 2}}, flow::default_config(flow::Method::TcnfBase)), ConfigError);
}

TEST_CASE("ask: bounds, determinism, vanishing step size") {
  CmaOptions o;
  o.dims = 6;
  o.seed = 3;
  CmaEs a(o), b(o);
  const auto pa = a.ask(), pb = b.ask();
  CHECK(pa == pb);
  CHECK(pa.size() == default_population(6));
  for (const auto& c : pa)
    for (double v : c) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  o.sigma0 = 1e-12;
  o.mean0 = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  CmaEs tiny(o);
  for (const auto& c : tiny.ask())
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(c[j] - o.mean0[j]) < 1e-9);
  // far outside the box, samples are reflected back in
  o.sigma0 = 5.0;
  CmaEs wide(o);
  for (int g = 0; g < 5; ++g)
    for (const auto& c : wide.ask())
      for (double v : c) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
}

TEST_CASE("strategy state invariants") {
  CmaOptions o;
  o.dims = 4;
  o.seed = 8;
  CmaEs es(o);
  double wsum = 0.0;
  for (double w : es.weights()) wsum += w;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<double> target{0.3, 0.6, 0.2, 0.9};
  for (int g = 0; g < 30; ++g) {
    const auto pop = es.ask();
    std::vector<double> f;
    for (const auto& c : pop) f.push_back(sphere(c, target) + 0.3 * c[0] * c[1]);
    es.tell(pop, f);
    const auto& C = es.covariance();
    CHECK((C - C.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("flat fitness keeps the mean and widens the step") {
  CmaOptions o;
  o.dims = 3;
  o.seed = 2;
  CmaEs es(o);
  const Eigen::VectorXd mean = es.mean();
  const double sigma = es.sigma();
  const auto pop = es.ask();
  es.tell(pop, std::vector<double>(pop.size(), 4.0));
  CHECK(es.mean() == mean);
  CHECK(es.sigma() > sigma);
}

TEST_CASE("tell depends on fitness ranks only") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    CmaOptions o;
    o.dims = 2 + rep % 5;
    o.seed = rng();
    CmaEs a(o), b(o), c(o);
    std::vector<double> target(o.dims);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& t : target) t = u(rng);
    for (int g = 0; g < 25; ++g) {
      const auto pa = a.ask(), pb = b.ask(), pc = c.ask();
      REQUIRE(pa == pb);
      REQUIRE(pa == pc);
      std::vector<double> f, mono, with_nan;
      for (const auto& x : pa) {
        const double v = sphere(x, target);
        f.push_back(v);
        mono.push_back(std::exp(3.0 * v) * 2.0 - 5.0);
        with_nan.push_back(v);
      }
      // the worst candidate may as well be NaN
      const auto worst = std::max_element(f.begin(), f.end()) - f.begin();
      with_nan[static_cast<std::size_t>(worst)] = std::nan("");
      a.tell(pa, f);
      b.tell(pb, mono);
      c.tell(pc, with_nan);
    }
    CHECK(a.mean() == b.mean());
    CHECK(a.covariance() == b.covariance());
    CHECK(a.sigma() == b.sigma());
    CHECK(a.mean() == c.mean());
    CHECK(a.sigma() == c.sigma());
  }
}

TEST_CASE("sphere benchmark converges") {
  int solved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CmaOptions o;
    o.dims = 5;
    o.seed = seed;
    CmaEs es(o);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::vector<double> target(5);
    for (double& t : target) t = u(rng);
    std::size_t evals = 0;
    while (evals + es.population() <= 3000 && es.best_fitness() >= 1e-8) {
      const auto pop = es.ask();
      std::vector<double> f;
      for (const auto& c : pop) f.push_back(sphere(c, target));
      es.tell(pop, f);
      evals += pop.size();
    }
    if (es.best_fitness() < 1e-8) ++solved;
  }
  CHECK(solved >= 9);
}

TEST_CASE("stagnation triggers a restart with a doubled population") {
  CmaOptions o;
  o.dims = 3;
  o.seed = 4;
  CmaEs es(o);
  const std::size_t lambda = es.population();
  for (int g = 0; g < 21; ++g) {
    const auto pop = es.ask();
    std::vector<double> f(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) f[i] = double(i % 3);  // never improves on 0
    es.tell(pop, f);
  }
  CHECK(es.restarts() == 1);
  CHECK(es.population() == 2 * lambda);
  CHECK(es.best_fitness() == 0.0);
}

TEST_CASE("objective names and worker count") {
  CHECK(objective_from_string("labeled-30-70") == Objective::Labeled);
  CHECK(objective_from_string(to_string(Objective::ValidationLoss)) == Objective::ValidationLoss);
  CHECK_THROWS_AS(objective_from_string("auc"), ConfigError);
  CHECK(trial_seed(1, 0) != trial_seed(1, 1));
  CHECK(trial_seed(1, 0) == trial_seed(1, 0));
}

TEST_CASE("search runs whole generations within the budget") {
  const auto raw = labeled_sine(300, 1);
  const auto train_ds = train::prepare_training_series(raw);
  const auto eval_ds = train::prepare_test_series(raw, *train_ds.norm_stats);
  SearchConfig cfg;
  cfg.base = flow::default_config(flow::Method::RealNvp);
  cfg.candidate_train.epochs = 1;
  cfg.final_train.epochs = 2;
  cfg.lookback_max = 10;
  cfg.seed = 9;
  const std::size_t lambda = default_population(search_space(flow::Method::RealNvp).size());

  cfg.budget = lambda - 1;
  CHECK_THROWS_AS(run_search(train_ds, eval_ds, cfg), ConfigError);
  CHECK_THROWS_AS(run_search(train_ds, std::nullopt, cfg), ConfigError);

  cfg.budget = lambda;
  const auto one = run_search(train_ds, eval_ds, cfg);
  CHECK(one.trials.size() == lambda);
  for (const auto& t : one.trials) {
    CHECK(t.generation == 0);
    if (t.error.empty()) CHECK(t.fitness == doctest::Approx(-(0.3 * t.auc + 0.7 * t.vus)).epsilon(1e-15));
  }
  for (const auto& t : one.trials)
    if (!std::isnan(t.fitness)) CHECK(one.trials[one.best_trial].fitness <= t.fitness);
  CHECK(one.best_report.epochs.size() <= 2);
}

TEST_CASE("search results do not depend on the worker count") {
  const auto raw = labeled_sine(300, 2);
  const auto train_ds = train::prepare_training_series(raw);
  SearchConfig cfg;
  cfg.base = flow::default_config(flow::Method::TcnfBase);
  cfg.objective = Objective::ValidationLoss;
  cfg.candidate_train.epochs = 1;
  cfg.final_train.epochs = 1;
  cfg.lookback_max = 8;
  cfg.population = 4;
  cfg.budget = 8;
  cfg.seed = 3;
  const auto dir = std::filesystem::temp_directory_path();
  cfg.workers = 1;
  const auto a = run_search(train_ds, std::nullopt, cfg);
  write_trials_csv(a.trials, dir / "tcnf_trials_a.csv");
  cfg.workers = 3;
  const auto b = run_search(train_ds, std::nullopt, cfg);
  write_trials_csv(b.trials, dir / "tcnf_trials_b.csv");
  CHECK(a.trials.size() == 8);
  CHECK(a.trials.back().generation == 1);
  const std::string text = slurp(dir / "tcnf_trials_a.csv");
  CHECK(text == slurp(dir / "tcnf_trials_b.csv"));
  CHECK(text.rfind("generation,trial,rank,flow.couplings,", 0) == 0);
  for (const auto& t : a.trials) CHECK(t.fitness == t.val_loss);
  std::filesystem::remove(dir / "tcnf_trials_a.csv");
  std::filesystem::remove(dir / "tcnf_trials_b.csv");
}
