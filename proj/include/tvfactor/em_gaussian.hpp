#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tvfactor/model_core.hpp"

namespace tvfactor {

/// Posterior factor moments, plus the per-point marginal terms they came with.
struct EStepStats {
  Eigen::MatrixXd eta;               // N x K, row n is eta_n
  std::vector<Eigen::MatrixXd> psi;  // N matrices K x K
  Eigen::VectorXd xi2;               // latent scale weights; empty for the Gaussian model
  Eigen::VectorXd quad;              // y'S^{-1}y under the parameters used
  Eigen::VectorXd log_det;           // log|S|
  double objective = 0.0;            // log joint posterior at those parameters

  Eigen::Index size() const { return eta.rows(); }
  /// eta_n eta_n' (scaled by xi2_n when present) + psi_n.
  Eigen::MatrixXd second_moment(Eigen::Index n) const;
};

struct FitConfig {
  int max_iter = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  RegularizationConfig regularization;
  bool tv_sigma = false;
  double sigma_floor = 1e-10;

  void validate() const;
};

struct FitReport {
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  /// Index into trace from which the objective is fixed (later bandwidth changes restart it).
  int trace_start = 0;
  std::vector<double> bandwidth_trace;
};

/// lambda_d = I, Sigma = 1, B ~ N(0, 0.001^2) drawn from seed.
FactorModelParams initial_params(Eigen::Index q, Eigen::Index k, const WeightScheme& scheme,
                                 std::uint64_t seed, bool tv_sigma = false);

EStepStats e_step(const Eigen::MatrixXd& obs, const TimePoints& times,
                  const FactorModelParams& params);

/// E-step for a given family; robust families also fill xi2. Computes the objective.
EStepStats posterior_pass(const Eigen::MatrixXd& obs, const TimePoints& times,
                          const FactorModelParams& params, const Family& family,
                          const RegularizationConfig& reg = {});

/// Basis update alone (free, diagonal or inverse-Wishart).
BasisSet update_basis(const EStepStats& stats, const TimePoints& times, const WeightScheme& scheme,
                      const RegularizationConfig& reg);

FactorModelParams m_step(const Eigen::MatrixXd& obs, const TimePoints& times,
                         const EStepStats& stats, const WeightScheme& scheme,
                         const RegularizationConfig& reg = {}, double sigma_floor = 1e-10);

struct TvSigmaUpdate {
  Eigen::MatrixXd B;
  std::vector<Eigen::VectorXd> nu;
};

/// Conditional updates for the time-varying idiosyncratic variance model:
/// B rows given the current Sigma_t, then the variance bases given the new B.
TvSigmaUpdate cm_step_tv_sigma(const Eigen::MatrixXd& obs, const TimePoints& times,
                               const EStepStats& stats, const FactorModelParams& current,
                               double sigma_floor = 1e-10);

/// Full parameter update for one iteration (M-step or ECM sweep).
FactorModelParams update_params(const Eigen::MatrixXd& obs, const TimePoints& times,
                                const EStepStats& stats, const FactorModelParams& current,
                                const FitConfig& config);

double log_joint_posterior(const Eigen::MatrixXd& obs, const TimePoints& times,
                           const FactorModelParams& params, const RegularizationConfig& reg = {});

/// Called after each E-step; may modify params (e.g. the bandwidth) and return true.
using IterationHook =
    std::function<bool(int iter, FactorModelParams& params, const EStepStats& stats)>;

struct FitResult {
  FactorModelParams params;
  FitReport report;
  EStepStats stats;  // at the returned parameters
};

FitResult fit_family(const Eigen::MatrixXd& obs, const TimePoints& times,
                     const WeightScheme& scheme, const FitConfig& config, const Family& family,
                     const std::optional<FactorModelParams>& init = std::nullopt,
                     const IterationHook& hook = {}, Eigen::Index k = -1);

/// Gaussian EM. K is taken from init when given, otherwise from k.
FitResult fit(const Eigen::MatrixXd& obs, const TimePoints& times, const WeightScheme& scheme,
              const FitConfig& config, Eigen::Index k,
              const std::optional<FactorModelParams>& init = std::nullopt);

}  // namespace tvfactor
