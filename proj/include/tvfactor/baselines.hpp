#pragma once

#include <Eigen/Core>
#include <vector>

#include "tvfactor/model_core.hpp"

namespace tvfactor {

/// Exponentially weighted second moments of PCA factor scores.
struct EwmaModel {
  Eigen::MatrixXd W;          // Q x K, orthonormal columns
  double alpha = 1.0;
  Eigen::MatrixXd z;          // N x K scores
  Eigen::VectorXd positions;  // index of each row in the full series
  Eigen::VectorXd sigma;      // Q

  Eigen::MatrixXd lambda_at(double position) const;
  Eigen::MatrixXd covariance_at(double position) const;
  double log_density(const Eigen::VectorXd& y, double position) const;
};

/// Positions default to 1..N.
EwmaModel ewma_fit(const Eigen::MatrixXd& obs, Eigen::Index k, double alpha,
                   const Eigen::VectorXd& positions = Eigen::VectorXd());

/// Gaussian log-density under Sigma + W Lambda W' for a PSD Lambda.
double low_rank_log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& w,
                            const Eigen::MatrixXd& lambda, const Eigen::VectorXd& sigma);

/// Leave-one-out score: each point scored under Lambda built from the other points.
double ewma_loo_score(const EwmaModel& model, const Eigen::MatrixXd& obs);

struct EwmaSelection {
  Eigen::Index k = 0;
  double alpha = 1.0;
  double score = 0.0;
};

/// Default alpha grid 1.000, 0.999, ..., 0.950.
std::vector<double> default_ewma_alphas();

EwmaSelection ewma_select(const Eigen::MatrixXd& obs, const std::vector<Eigen::Index>& ks,
                          const std::vector<double>& alphas,
                          const Eigen::VectorXd& positions = Eigen::VectorXd());

/// Full-covariance MAP with harmonic averaging; no factor structure.
struct NonFactorModel {
  BasisSet basis;
  WeightScheme scheme;

  Eigen::MatrixXd lambda_at(double t) const { return tvfactor::lambda_at(t, basis, scheme); }
};

NonFactorModel nonfactor_map(const Eigen::MatrixXd& obs, const TimePoints& times,
                             const WeightScheme& scheme);

/// Kernel average of f f' with weights exp(-gamma |t - t_n|).
struct NadarayaWatson {
  Eigen::MatrixXd factors;  // N x K
  Eigen::VectorXd times;
  double gamma = 0.0;

  Eigen::MatrixXd at(double t) const;
};

NadarayaWatson nadaraya_watson_cov(const Eigen::MatrixXd& factors, const Eigen::VectorXd& times,
                                   double gamma);

}  // namespace tvfactor
