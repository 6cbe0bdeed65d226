#include "tvfactor/linalg.hpp"

#include <cmath>
#include <sstream>

#include "tvfactor/errors.hpp"

namespace tvfactor {

namespace {

std::string diagnostics(const Eigen::MatrixXd& m, const std::string& what) {
  std::ostringstream os;
  os << what << " (" << m.rows() << "x" << m.cols() << ") is not positive definite";
  if (m.size() > 0) {
    os << "; trace=" << m.trace() << ", min diag=" << m.diagonal().minCoeff()
       << ", max diag=" << m.diagonal().maxCoeff();
    if (!m.allFinite()) os << ", contains non-finite entries";
  }
  return os.str();
}

}  // namespace

bool SpdFactor::try_compute(const Eigen::MatrixXd& m) {
  jittered_ = false;
  if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
  llt_.compute(m);
  return llt_.info() == Eigen::Success;
}

SpdFactor::SpdFactor(const Eigen::MatrixXd& m, const std::string& what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw NumericError(what + ": expected a non-empty square matrix");
  }
  if (try_compute(m)) return;
  if (m.allFinite()) {
    const double k = static_cast<double>(m.rows());
    const double jitter = 1e-10 * std::abs(m.trace()) / k;
    if (jitter > 0.0) {
      Eigen::MatrixXd mj = m;
      mj.diagonal().array() += jitter;
      llt_.compute(mj);
      if (llt_.info() == Eigen::Success) {
        jittered_ = true;
        return;
      }
    }
  }
  throw NumericError(diagnostics(m, what));
}

Eigen::MatrixXd SpdFactor::inverse() const {
  const Eigen::Index k = llt_.rows();
  return symmetrize(llt_.solve(Eigen::MatrixXd::Identity(k, k)));
}

Eigen::MatrixXd SpdFactor::solve(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }

Eigen::VectorXd SpdFactor::solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }

double SpdFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const std::string& what) {
  return SpdFactor(m, what).inverse();
}

double spd_log_det(const Eigen::MatrixXd& m, const std::string& what) {
  return SpdFactor(m, what).log_det();
}

Eigen::MatrixXd solve_right_spd(const Eigen::MatrixXd& r, const Eigen::MatrixXd& a,
                                const std::string& what) {
  SpdFactor f(a, what);
  return f.solve(Eigen::MatrixXd(r.transpose())).transpose();
}

}  // namespace tvfactor
