// SPDX-License-Identifier: Apache-2.0
#include "tcnf/cmaes.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tcnf::hpo {

std::size_t default_population(std::size_t n) {
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(n))));
}

namespace {

double reflect(double x) {
  // period-2 tent map onto [0, 1]
  double r = std::fmod(std::abs(x), 2.0);
  return r > 1.0 ? 2.0 - r : r;
}

}  // namespace

CmaEs::CmaEs(const CmaOptions& opts)
    : opts_(opts), n_(opts.dims), rng_(opts.seed), best_fitness_(std::numeric_limits<double>::infinity()) {
  if (n_ == 0) throw ConfigError("CMA-ES needs at least one dimension");
  if (!(opts.sigma0 > 0.0)) throw ConfigError("CMA-ES sigma0 must be positive");
  if (!opts.mean0.empty() && opts.mean0.size() != n_) throw ConfigError("CMA-ES initial mean has the wrong length");
  const std::size_t lambda = opts.population.value_or(default_population(n_));
  if (lambda < 2) throw ConfigError("CMA-ES population must be at least 2");
  init_strategy(lambda);
  Eigen::VectorXd m = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_), 0.5);
  for (std::size_t i = 0; i < opts.mean0.size(); ++i) m[static_cast<Eigen::Index>(i)] = opts.mean0[i];
  reset_distribution(m);
}

void CmaEs::init_strategy(std::size_t lambda) {
  const double n = static_cast<double>(n_);
  lambda_ = lambda;
  mu_ = lambda / 2;
  weights_.resize(mu_);
  for (std::size_t i = 0; i < mu_; ++i) {
    weights_[i] = std::log((static_cast<double>(lambda) + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
  }
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  double sq = 0.0;
  for (double& w : weights_) {
    w /= total;
    sq += w * w;
  }
  mu_eff_ = 1.0 / sq;
  c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
  d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
  c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
  c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
  c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) / ((n + 2.0) * (n + 2.0) + mu_eff_));
  chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
}

void CmaEs::reset_distribution(const Eigen::VectorXd& mean) {
  const auto n = static_cast<Eigen::Index>(n_);
  mean_ = mean;
  sigma_ = opts_.sigma0;
  p_sigma_ = Eigen::VectorXd::Zero(n);
  p_c_ = Eigen::VectorXd::Zero(n);
  cov_ = Eigen::MatrixXd::Identity(n, n);
  local_generation_ = 0;
  best_history_.clear();
  decompose();
}

void CmaEs::decompose() {
  cov_ = (0.5 * (cov_ + cov_.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_);
  Eigen::VectorXd values = eig.eigenvalues();
  const double floor = std::max(values.maxCoeff(), 1e-300) * 1e-14;
  bool repaired = false;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values[i] > floor)) {
      values[i] = floor;
      repaired = true;
    }
  }
  basis_ = eig.eigenvectors();
  scales_ = values.cwiseSqrt();
  if (repaired) {
    cov_ = basis_ * values.asDiagonal() * basis_.transpose();
    cov_ = (0.5 * (cov_ + cov_.transpose())).eval();
  }
  inv_sqrt_ = basis_ * scales_.cwiseInverse().asDiagonal() * basis_.transpose();
}

std::vector<std::vector<double>> CmaEs::ask() {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out(lambda_, std::vector<double>(n_));
  Eigen::VectorXd z(static_cast<Eigen::Index>(n_));
  for (auto& cand : out) {
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(rng_);
    const Eigen::VectorXd x = mean_ + sigma_ * (basis_ * scales_.cwiseProduct(z));
    for (std::size_t j = 0; j < n_; ++j) cand[j] = reflect(x[static_cast<Eigen::Index>(j)]);
  }
  return out;
}

void CmaEs::tell(const std::vector<std::vector<double>>& candidates, std::span<const double> fitness) {
  if (candidates.size() != lambda_ || fitness.size() != lambda_) {
    throw ConfigError("CMA-ES tell expects " + std::to_string(lambda_) + " candidates and fitness values");
  }
  const auto n = static_cast<Eigen::Index>(n_);
  auto key = [&](std::size_t i) {
    return std::isnan(fitness[i]) ? std::numeric_limits<double>::infinity() : fitness[i];
  };
  std::vector<std::size_t> order(lambda_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  const double gen_best = key(order.front());
  if (gen_best < best_fitness_) {
    best_fitness_ = gen_best;
    best_ = candidates[order.front()];
  }
  ++generation_;
  ++local_generation_;

  bool flat = true;
  for (std::size_t i = 1; i < lambda_; ++i) flat = flat && key(i) == key(0);
  if (flat) {
    // no ranking information: keep the distribution, widen the step
    sigma_ *= std::exp(0.2 + c_sigma_ / d_sigma_);
  } else {
    std::vector<Eigen::VectorXd> y(mu_);
    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < mu_; ++i) {
      const auto& c = candidates[order[i]];
      if (c.size() != n_) throw ConfigError("CMA-ES candidate has the wrong length");
      y[i] = (Eigen::Map<const Eigen::VectorXd>(c.data(), n) - mean_) / sigma_;
      y_w += weights_[i] * y[i];
    }
    mean_ += sigma_ * y_w;

    p_sigma_ = (1.0 - c_sigma_) * p_sigma_ + std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * (inv_sqrt_ * y_w);
    const double decay = 1.0 - std::pow(1.0 - c_sigma_, 2.0 * static_cast<double>(local_generation_));
    const double ps_norm = p_sigma_.norm();
    const bool h_sigma = ps_norm / std::sqrt(decay) < (1.4 + 2.0 / (static_cast<double>(n_) + 1.0)) * chi_n_;
    p_c_ = (1.0 - c_c_) * p_c_ + (h_sigma ? std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) : 0.0) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < mu_; ++i) rank_mu += weights_[i] * y[i] * y[i].transpose();
    const double correction = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);
    cov_ = (1.0 - c_1_ - c_mu_) * cov_ + c_1_ * (p_c_ * p_c_.transpose() + correction * cov_) + c_mu_ * rank_mu;
    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
    decompose();
  }

  best_history_.push_back(best_fitness_);
  const std::size_t window = opts_.stagnation_generations;
  if (opts_.restarts && best_history_.size() > window) {
    const double then = best_history_[best_history_.size() - 1 - window];
    const bool stalled = std::isinf(then) ? std::isinf(best_fitness_) : then - best_fitness_ < opts_.stagnation_tolerance;
    if (stalled) {
      ++restarts_;
      init_strategy(lambda_ * 2);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Eigen::VectorXd m(n);
      for (Eigen::Index j = 0; j < n; ++j) m[j] = u(rng_);
      reset_distribution(m);
    }
  }
}

}  // namespace tcnf::hpo
