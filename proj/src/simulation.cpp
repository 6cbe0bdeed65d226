#include "tvfactor/simulation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"
#include "tvfactor/random.hpp"

namespace tvfactor {

void SimulationSpec::validate() const {
  if (N < 2 || Q < 1 || K < 1) throw ConfigError("simulation: N >= 2, Q >= 1, K >= 1 required");
  if (K > Q) throw ConfigError("simulation: K must not exceed Q");
  if (!(s2 > 0.0)) throw ConfigError("simulation: s2 must be positive");
  if (!std::isfinite(gamma)) throw ConfigError("simulation: gamma must be finite");
  if (family.robust() && !(family.nu > 0.0)) throw ConfigError("simulation: nu must be positive");
}

Eigen::MatrixXd SimulationTruth::covariance(Eigen::Index n) const {
  Eigen::MatrixXd s = B * lambda[static_cast<size_t>(n)] * B.transpose();
  s.diagonal() += sigma;
  return symmetrize(s);
}

Eigen::MatrixXd block_pattern(Eigen::Index q, Eigen::Index k) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(q, k);
  const Eigen::Index size = q / k;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index start = j * size;
    const Eigen::Index end = j == k - 1 ? q : start + size;
    m.block(start, j, end - start, 1).setOnes();
  }
  return m;
}

namespace {

/// Lower Cholesky factor of the GP Gram matrix on 1..N.
Eigen::MatrixXd gp_factor(Eigen::Index n, double gamma) {
  const double c = 0.5 * std::pow(10.0, -gamma);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = static_cast<double>(i - j);
      g(i, j) = std::exp(-c * d * d);
    }
  }
  // Standard 1e-10 jitter; escalated only if the factorization still fails.
  for (double jitter = 1e-10; jitter < 1e-2; jitter *= 10.0) {
    Eigen::MatrixXd gj = g;
    gj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(gj);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericError("GP Gram matrix could not be factorized");
}

Eigen::MatrixXd sqrt_factor(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

SimulationResult simulate(const SimulationSpec& spec) {
  spec.validate();
  const Eigen::Index n_count = spec.N;
  const Eigen::Index q = spec.Q;
  const Eigen::Index k = spec.K;
  std::normal_distribution<double> nd(0.0, 1.0);

  // Factor correlation path.
  const Eigen::MatrixXd lg = gp_factor(n_count, spec.gamma);
  Rng gp_rng(derive_seed(spec.seed, "sim-gp"));
  std::vector<Eigen::MatrixXd> r(static_cast<size_t>(n_count), Eigen::MatrixXd(k, k));
  Eigen::VectorXd z(n_count);
  for (Eigen::Index b = 0; b < k; ++b) {
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index i = 0; i < n_count; ++i) z(i) = nd(gp_rng);
      const Eigen::VectorXd path = lg * z;
      for (Eigen::Index i = 0; i < n_count; ++i) r[static_cast<size_t>(i)](a, b) = path(i);
    }
  }
  SimulationResult out;
  out.times = TimePoints::range(n_count);
  out.truth.lambda.reserve(static_cast<size_t>(n_count));
  for (const auto& ri : r) {
    const Eigen::MatrixXd rr = ri * ri.transpose();
    const Eigen::VectorXd dinv = rr.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd c = dinv.asDiagonal() * rr * dinv.asDiagonal();
    c.diagonal().setOnes();
    out.truth.lambda.push_back(symmetrize(c));
  }

  // Loadings and noise variances.
  Rng b_rng(derive_seed(spec.seed, "sim-loadings"));
  std::normal_distribution<double> bn(1.0, 0.1);
  const Eigen::MatrixXd pattern = block_pattern(q, k);
  out.truth.B = Eigen::MatrixXd::Zero(q, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < q; ++i) {
      if (pattern(i, j) != 0.0) out.truth.B(i, j) = bn(b_rng);
    }
  }
  Rng s_rng(derive_seed(spec.seed, "sim-noise-var"));
  std::uniform_real_distribution<double> un(0.5 * spec.s2, 1.5 * spec.s2);
  out.truth.sigma.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) out.truth.sigma(i) = un(s_rng);

  // Observations.
  Rng y_rng(derive_seed(spec.seed, "sim-obs"));
  std::chi_squared_distribution<double> chi(spec.family.robust() ? spec.family.nu : 1.0);
  out.obs.resize(n_count, q);
  const Eigen::VectorXd sd = out.truth.sigma.cwiseSqrt();
  Eigen::VectorXd fk(k);
  Eigen::VectorXd e(q);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    for (Eigen::Index i = 0; i < k; ++i) fk(i) = nd(y_rng);
    for (Eigen::Index i = 0; i < q; ++i) e(i) = nd(y_rng);
    Eigen::VectorXd y = out.truth.B * (sqrt_factor(out.truth.lambda[static_cast<size_t>(n)]) * fk) +
                        sd.cwiseProduct(e);
    if (spec.family.robust()) y *= std::sqrt(spec.family.nu / chi(y_rng));
    out.obs.row(n) = y.transpose();
  }
  return out;
}

double kl_gaussian(const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& sigma_p,
                   const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& sigma_q) {
  if (sigma_p.rows() != sigma_q.rows() || mu_p.size() != mu_q.size() ||
      mu_p.size() != sigma_p.rows()) {
    throw ConfigError("KL divergence: dimension mismatch");
  }
  SpdFactor fp(sigma_p, "first covariance");
  SpdFactor fq(sigma_q, "second covariance");
  const Eigen::VectorXd dm = mu_q - mu_p;
  const double tr = fq.solve(sigma_p).trace();
  const double quad = dm.dot(fq.solve(dm));
  const double v = 0.5 * (tr + quad - static_cast<double>(mu_p.size()) + fq.log_det() - fp.log_det());
  return std::max(v, 0.0);
}

double kl_gaussian(const Eigen::MatrixXd& sigma_p, const Eigen::MatrixXd& sigma_q) {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(sigma_p.rows());
  return kl_gaussian(z, sigma_p, z, sigma_q);
}

}  // namespace tvfactor
