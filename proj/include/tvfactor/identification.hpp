#pragma once

#include <Eigen/Core>
#include <vector>

#include "tvfactor/model_core.hpp"

namespace tvfactor {

struct IdentifyConfig {
  double tau0 = -1.0;           // <= 0: K
  double tau_increment = -1.0;  // <= 0: K
  int check_every = 10;
  double step_size = 1e-2;
  int max_steps = 5000;
  double tol = 1e-7;

  void validate() const;
};

/// B~ = B V D^{-1/2}, lambda~_d = D^{1/2} V' lambda_d V D^{1/2}; Sigma and weights unchanged.
FactorModelParams orthonormalize(const FactorModelParams& params);

struct SparsifyResult {
  Eigen::MatrixXd B;
  BasisSet basis;
  Eigen::MatrixXd A;
  double tau = 0.0;
  int steps = 0;
  std::vector<double> objective;  // accepted iterates (restarts when tau grows)
  std::vector<int> tau_changes;   // step indices where tau was increased
};

/// -sum |B~ A| + (tau/K) log|A|.
double sparsify_objective(const Eigen::MatrixXd& b_tilde, const Eigen::MatrixXd& a, double tau);

/// -B~' sign(B~ A) + (tau/K) A^{-T}, with sign(0) = 0.
Eigen::MatrixXd sparsify_gradient(const Eigen::MatrixXd& b_tilde, const Eigen::MatrixXd& a, double tau);

SparsifyResult sparsify(const Eigen::MatrixXd& b_tilde, const BasisSet& basis_tilde,
                        const IdentifyConfig& config = {});

struct IdentifiedModel {
  FactorModelParams params;  // B^, lambda^ with the original Sigma and weights
  SparsifyResult rotation;
};

IdentifiedModel identify(const FactorModelParams& params, const IdentifyConfig& config = {});

double cosine_similarity(const Eigen::MatrixXd& b, Eigen::Index p, Eigen::Index q);

/// Q x Q matrix of row cosine similarities.
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& b);

/// B chol(Lambda_t), lower factor with positive diagonal.
Eigen::MatrixXd time_varying_loadings(const FactorModelParams& params, double t);

}  // namespace tvfactor
