#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "tvfactor/em_gaussian.hpp"
#include "tvfactor/model_core.hpp"

namespace tvfactor::app {

struct ForecastConfig {
  int max_iter = 100;  // basis-only EM iterations after each roll
  double rel_tol = 1e-6;
  double perturbation = 0.01;  // log-normal noise on the eigenvalues of a new basis
  std::uint64_t seed = 0;
  RegularizationConfig regularization;
};

struct ForecastStep {
  double t = 0.0;
  double score = 0.0;  // predictive log-density of the realized observation
  double cumulative = 0.0;
  int iterations = 0;  // EM iterations spent on the roll after scoring
};

struct ForecastResult {
  std::vector<ForecastStep> steps;
  FactorModelParams final_params;
};

/**
 * @brief One-step-ahead prediction over rows n_train, n_train+1, ... of obs.
 *
 * Each step scores the next observation under the extrapolated covariance, then
 * rolls the basis window (new basis at the scored time, oldest dropped) and
 * re-estimates the bases alone on the observations the window covers. B, Sigma,
 * K and the bandwidth stay fixed. Models with a single basis are not rolled.
 */
ForecastResult forecast_factor(const Eigen::MatrixXd& obs, const TimePoints& times,
                               Eigen::Index n_train, const FactorModelParams& fitted,
                               const Family& family, const ForecastConfig& config = {});

/// New basis: Lambda at t with multiplicative log-normal noise on its eigenvalues.
Eigen::MatrixXd perturbed_basis(const Eigen::MatrixXd& lambda, double scale, std::uint64_t seed);

/// Scores of the EWMA model refit on all rows before each test row, one column per alpha.
/// Positions are row indices + 1.
Eigen::MatrixXd forecast_ewma(const Eigen::MatrixXd& obs, Eigen::Index n_train, Eigen::Index k,
                              const std::vector<double>& alphas);

}  // namespace tvfactor::app
