#include "tvfactor/identification.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"

namespace tvfactor {

void IdentifyConfig::validate() const {
  if (check_every < 1 || max_steps < 1) throw ConfigError("identify: counts must be positive");
  if (!(step_size > 0.0) || !(tol > 0.0)) throw ConfigError("identify: step and tol must be positive");
}

FactorModelParams orthonormalize(const FactorModelParams& params) {
  const Eigen::Index k = params.K();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(params.B.transpose() * params.B);
  const Eigen::VectorXd d = es.eigenvalues();
  if (!(d(0) > 1e-12 * std::max(d(k - 1), 1e-300))) {
    throw NumericError("loading Gram matrix is rank deficient; try a smaller number of factors");
  }
  const Eigen::MatrixXd& v = es.eigenvectors();
  const Eigen::VectorXd sq = d.cwiseSqrt();
  FactorModelParams out = params;
  out.B = params.B * v * sq.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd t = sq.asDiagonal() * v.transpose();
  for (auto& lam : out.basis.lambdas) lam = symmetrize(t * lam * t.transpose());
  return out;
}

double sparsify_objective(const Eigen::MatrixXd& b_tilde, const Eigen::MatrixXd& a, double tau) {
  const double det = a.determinant();
  if (!(det > 0.0)) return -std::numeric_limits<double>::infinity();
  const double k = static_cast<double>(a.rows());
  return -(b_tilde * a).cwiseAbs().sum() + (tau / k) * std::log(det);
}

Eigen::MatrixXd sparsify_gradient(const Eigen::MatrixXd& b_tilde, const Eigen::MatrixXd& a, double tau) {
  const double k = static_cast<double>(a.rows());
  const Eigen::MatrixXd sgn = (b_tilde * a).unaryExpr([](double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  });
  return -b_tilde.transpose() * sgn + (tau / k) * a.inverse().transpose();
}

SparsifyResult sparsify(const Eigen::MatrixXd& b_tilde, const BasisSet& basis_tilde,
                        const IdentifyConfig& config) {
  config.validate();
  const Eigen::Index k = b_tilde.cols();
  const double kd = static_cast<double>(k);
  const double norm = std::sqrt(kd);
  const double inc = config.tau_increment > 0.0 ? config.tau_increment : kd;
  SparsifyResult r;
  r.tau = config.tau0 > 0.0 ? config.tau0 : kd;
  r.A = Eigen::MatrixXd::Identity(k, k);
  double obj = sparsify_objective(b_tilde, r.A, r.tau);
  r.objective.push_back(obj);
  double step = config.step_size;

  auto eigen_ok = [&](const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0) > 0.5 * es.eigenvalues()(k - 1);
  };

  for (int it = 1; it <= config.max_steps; ++it) {
    r.steps = it;
    const Eigen::MatrixXd g = sparsify_gradient(b_tilde, r.A, r.tau);
    bool accepted = false;
    double next_obj = obj;
    Eigen::MatrixXd next;
    while (step > 1e-14) {
      next = r.A + step * g;
      next *= norm / next.norm();
      next_obj = sparsify_objective(b_tilde, next, r.tau);
      if (std::isfinite(next_obj) && next_obj >= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    bool converged = !accepted;
    if (accepted) {
      converged = std::abs(next_obj - obj) <= config.tol * std::max(std::abs(obj), 1e-300);
      r.A = next;
      obj = next_obj;
      r.objective.push_back(obj);
      step = std::min(config.step_size, 2.0 * step);
    }
    const bool check = it % config.check_every == 0 || converged;
    if (check && !eigen_ok(r.A)) {
      r.tau += inc;
      r.tau_changes.push_back(it);
      obj = sparsify_objective(b_tilde, r.A, r.tau);
      r.objective.push_back(obj);
      step = config.step_size;
      continue;
    }
    if (converged) break;
  }
  const Eigen::MatrixXd ainv = r.A.inverse();
  r.B = b_tilde * r.A;
  for (const auto& lam : basis_tilde.lambdas) {
    r.basis.lambdas.push_back(symmetrize(ainv * lam * ainv.transpose()));
  }
  return r;
}

IdentifiedModel identify(const FactorModelParams& params, const IdentifyConfig& config) {
  const FactorModelParams o = orthonormalize(params);
  IdentifiedModel m;
  m.rotation = sparsify(o.B, o.basis, config);
  m.params = o;
  m.params.B = m.rotation.B;
  m.params.basis = m.rotation.basis;
  return m;
}

double cosine_similarity(const Eigen::MatrixXd& b, Eigen::Index p, Eigen::Index q) {
  const double np = b.row(p).norm();
  const double nq = b.row(q).norm();
  if (np == 0.0 || nq == 0.0) throw NumericError("cosine similarity undefined for a zero loading row");
  return std::clamp(b.row(p).dot(b.row(q)) / (np * nq), -1.0, 1.0);
}

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& b) {
  const Eigen::Index q = b.rows();
  Eigen::MatrixXd s(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    s(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < q; ++j) s(i, j) = s(j, i) = cosine_similarity(b, i, j);
  }
  return s;
}

Eigen::MatrixXd time_varying_loadings(const FactorModelParams& params, double t) {
  const Eigen::MatrixXd lam = lambda_at(t, params.basis, params.weights);
  Eigen::LLT<Eigen::MatrixXd> llt(lam);
  if (llt.info() != Eigen::Success) throw NumericError("Lambda_t is not positive definite");
  return params.B * Eigen::MatrixXd(llt.matrixL());
}

}  // namespace tvfactor
