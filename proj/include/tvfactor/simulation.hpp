#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "tvfactor/model_core.hpp"

namespace tvfactor {

struct SimulationSpec {
  Eigen::Index N = 300;
  Eigen::Index Q = 130;
  Eigen::Index K = 5;
  double gamma = 3.0;  // GP kernel exp(-0.5 * 10^-gamma * dt^2)
  double s2 = 1.0;     // noise variances ~ Unif(0.5 s2, 1.5 s2)
  Family family;       // gaussian or student_t(6)
  std::uint64_t seed = 0;

  void validate() const;
};

struct SimulationTruth {
  Eigen::MatrixXd B;                    // Q x K block diagonal
  Eigen::VectorXd sigma;                // Q
  std::vector<Eigen::MatrixXd> lambda;  // one correlation matrix per time

  Eigen::MatrixXd covariance(Eigen::Index n) const;
};

struct SimulationResult {
  TimePoints times;
  Eigen::MatrixXd obs;
  SimulationTruth truth;
};

SimulationResult simulate(const SimulationSpec& spec);

/// Block-diagonal Q x K pattern: K contiguous blocks of floor(Q/K) rows, remainder in the last.
Eigen::MatrixXd block_pattern(Eigen::Index q, Eigen::Index k);

/// KL(N(mu_p, S_p) || N(mu_q, S_q)).
double kl_gaussian(const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& sigma_p,
                   const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& sigma_q);

/// Zero-mean version.
double kl_gaussian(const Eigen::MatrixXd& sigma_p, const Eigen::MatrixXd& sigma_q);

}  // namespace tvfactor
