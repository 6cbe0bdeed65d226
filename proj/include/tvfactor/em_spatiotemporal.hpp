#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "tvfactor/em_gaussian.hpp"
#include "tvfactor/model_core.hpp"

namespace tvfactor {

/// N matrices of size Q x P (locations in columns).
using Panel = std::vector<Eigen::MatrixXd>;

/// A: one basis set over vec(F) (dimension K_Q*K_P).
/// B: Kronecker-separated bases, Gamma_t (K_P) and Lambda_t (K_Q).
enum class StVariant { kA, kB };

struct SpatioTemporalParams {
  StVariant variant = StVariant::kA;
  Eigen::MatrixXd B;      // Q x K_Q
  Eigen::MatrixXd C;      // P x K_P
  Eigen::VectorXd sigma;  // Q
  Eigen::VectorXd phi;    // P
  BasisSet L;
  WeightScheme omega;
  BasisSet G;  // variant B only
  WeightScheme rho;

  Eigen::Index Q() const { return B.rows(); }
  Eigen::Index P() const { return C.rows(); }
  Eigen::Index KQ() const { return B.cols(); }
  Eigen::Index KP() const { return C.cols(); }
  void validate() const;
};

struct STEStepStats {
  Eigen::Index kq = 0;
  Eigen::Index kp = 0;
  std::vector<Eigen::MatrixXd> eta;  // K_Q x K_P each
  std::vector<Eigen::MatrixXd> psi;  // (K_Q K_P) square each
  double objective = 0.0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(eta.size()); }
  /// K_Q x K_Q block (i, j) of psi_n, i, j < K_P.
  Eigen::MatrixXd block(Eigen::Index n, Eigen::Index i, Eigen::Index j) const {
    return psi[static_cast<size_t>(n)].block(i * kq, j * kq, kq, kq);
  }
};

/// Order of the conditional maximizations inside one sweep.
/// kLoadingsFirst: (gamma,) lambda, Phi, C, B, Sigma.
/// kEquationOrder: (gamma,) lambda, Phi, Sigma, C, B.
enum class StUpdateOrder { kLoadingsFirst, kEquationOrder };

struct StFitConfig {
  int max_iter = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  double floor = 1e-10;
  bool freeze_spatial = false;  // keep C and Phi at their initial values
  bool freeze_gamma = false;    // keep G at its initial value (variant B)
  bool normalize_phi = true;    // geometric mean of Phi set to 1 after the fit
  StUpdateOrder order = StUpdateOrder::kLoadingsFirst;
};

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

void check_panel(const Panel& obs, const TimePoints& times);

SpatioTemporalParams st_initial_params(StVariant variant, Eigen::Index q, Eigen::Index p,
                                       Eigen::Index kq, Eigen::Index kp, const WeightScheme& omega,
                                       const WeightScheme& rho, std::uint64_t seed);

STEStepStats e_step_st(const Panel& obs, const TimePoints& times,
                       const SpatioTemporalParams& params);

/// Covariance of vec(y_t).
Eigen::MatrixXd st_marginal_covariance(double t, const SpatioTemporalParams& params);

double st_log_joint_posterior(const Panel& obs, const TimePoints& times,
                              const SpatioTemporalParams& params);

// Conditional maximizers of the Q-functions, each given the current values in params.
BasisSet st_update_gamma(const STEStepStats& stats, const TimePoints& times,
                         const SpatioTemporalParams& params);
BasisSet st_update_lambda(const STEStepStats& stats, const TimePoints& times,
                          const SpatioTemporalParams& params);
Eigen::VectorXd st_update_phi(const Panel& obs, const STEStepStats& stats,
                              const SpatioTemporalParams& params, double floor = 1e-10);
Eigen::VectorXd st_update_sigma(const Panel& obs, const STEStepStats& stats,
                                const SpatioTemporalParams& params, double floor = 1e-10);
Eigen::MatrixXd st_update_C(const Panel& obs, const STEStepStats& stats,
                            const SpatioTemporalParams& params);
Eigen::MatrixXd st_update_B(const Panel& obs, const STEStepStats& stats,
                            const SpatioTemporalParams& params);

/// One full ECM sweep.
SpatioTemporalParams ecm_step_st(const Panel& obs, const TimePoints& times,
                                 const STEStepStats& stats, const SpatioTemporalParams& params,
                                 const StFitConfig& config);

struct StFitResult {
  SpatioTemporalParams params;
  FitReport report;
};

StFitResult fit_st(const Panel& obs, const TimePoints& times, const SpatioTemporalParams& init,
                   const StFitConfig& config);

}  // namespace tvfactor
