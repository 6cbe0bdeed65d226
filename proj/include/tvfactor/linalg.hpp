#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <string>

namespace tvfactor {

/**
 * @brief Cholesky factor of a symmetric PD matrix.
 *
 * On failure a jitter of 1e-10 * tr(M)/K is added to the diagonal once;
 * if that also fails a NumericError with diagnostics is thrown.
 */
class SpdFactor {
 public:
  SpdFactor() = default;
  explicit SpdFactor(const Eigen::MatrixXd& m, const std::string& what = "matrix");

  /// Plain attempt without jitter. Returns false if m is not numerically PD.
  bool try_compute(const Eigen::MatrixXd& m);

  Eigen::MatrixXd inverse() const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  double log_det() const;
  Eigen::MatrixXd lower() const { return llt_.matrixL(); }
  bool jittered() const { return jittered_; }
  Eigen::Index dim() const { return llt_.rows(); }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool jittered_ = false;
};

/// Inverse of a symmetric PD matrix, symmetrized.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const std::string& what = "matrix");

/// log|M| of a symmetric PD matrix.
double spd_log_det(const Eigen::MatrixXd& m, const std::string& what = "matrix");

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Solve X * A = R for X with A symmetric PD (row-wise normal equations).
Eigen::MatrixXd solve_right_spd(const Eigen::MatrixXd& r, const Eigen::MatrixXd& a,
                                const std::string& what);

}  // namespace tvfactor
