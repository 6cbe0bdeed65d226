#pragma once

#include "tvfactor/em_gaussian.hpp"

namespace tvfactor {

/// Same layout as the Gaussian stats with xi2 filled.
using RobustEStepStats = EStepStats;

struct RobustExtras {
  double nu = 6.0;
  Eigen::VectorXd xi2;
};

struct RobustFitResult {
  FactorModelParams params;
  RobustExtras extras;
  FitReport report;
  EStepStats stats;
};

/// xi2_n = (nu + Q) / (nu + y_n' (B Lambda B' + Sigma)^{-1} y_n), via Woodbury.
RobustEStepStats e_step_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                               const FactorModelParams& params, double nu);

FactorModelParams m_step_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                                const RobustEStepStats& stats, const WeightScheme& scheme,
                                const RegularizationConfig& reg = {});

RobustFitResult fit_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                           const WeightScheme& scheme, const FitConfig& config, double nu,
                           Eigen::Index k,
                           const std::optional<FactorModelParams>& init = std::nullopt);

/// Student-t log-likelihood plus the basis prior.
double robust_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                        const FactorModelParams& params, double nu);

}  // namespace tvfactor
