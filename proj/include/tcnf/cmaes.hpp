// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace tcnf::hpo {

/// 4 + floor(3 ln n).
std::size_t default_population(std::size_t n);

struct CmaOptions {
  std::size_t dims = 1;
  std::optional<std::size_t> population;  // default_population(dims) when empty
  double sigma0 = 0.3;
  std::vector<double> mean0;              // centre of the box when empty
  std::uint64_t seed = 0;
  bool restarts = true;
  std::size_t stagnation_generations = 20;
  double stagnation_tolerance = 1e-12;
};

/// Rank-based (mu/mu_w, lambda) CMA-ES on the unit box [0,1]^n, minimizing.
///
/// Samples are reflected at the walls. When the best fitness seen improves by
/// less than the stagnation tolerance over the stagnation window, the search
/// restarts from a uniform random mean with the population doubled.
class CmaEs {
 public:
  explicit CmaEs(const CmaOptions& opts);

  /// lambda candidates in [0,1]^n.
  std::vector<std::vector<double>> ask();
  /// `fitness[i]` belongs to `candidates[i]`; lower is better, NaN is worst.
  void tell(const std::vector<std::vector<double>>& candidates, std::span<const double> fitness);

  std::size_t dims() const noexcept { return n_; }
  std::size_t population() const noexcept { return lambda_; }
  std::size_t generation() const noexcept { return generation_; }
  std::size_t restarts() const noexcept { return restarts_; }
  double sigma() const noexcept { return sigma_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& covariance() const noexcept { return cov_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double best_fitness() const noexcept { return best_fitness_; }
  const std::vector<double>& best() const noexcept { return best_; }

 private:
  void init_strategy(std::size_t lambda);
  void reset_distribution(const Eigen::VectorXd& mean);
  void decompose();

  CmaOptions opts_;
  std::size_t n_ = 0;
  std::mt19937_64 rng_;

  std::size_t lambda_ = 0, mu_ = 0;
  std::vector<double> weights_;
  double mu_eff_ = 0, c_sigma_ = 0, d_sigma_ = 0, c_c_ = 0, c_1_ = 0, c_mu_ = 0, chi_n_ = 0;

  Eigen::VectorXd mean_, p_sigma_, p_c_;
  Eigen::MatrixXd cov_, basis_, inv_sqrt_;
  Eigen::VectorXd scales_;  // sqrt of the eigenvalues
  double sigma_ = 0;
  std::size_t generation_ = 0;  // total generations told
  std::size_t local_generation_ = 0;  // since the last restart
  std::size_t restarts_ = 0;

  double best_fitness_;
  std::vector<double> best_;
  std::vector<double> best_history_;  // best fitness after each generation since the last restart
};

}  // namespace tcnf::hpo
