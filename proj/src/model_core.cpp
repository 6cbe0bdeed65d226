#include "tvfactor/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"

namespace tvfactor {

TimePoints::TimePoints(Eigen::VectorXd t) : t_(std::move(t)) {
  if (t_.size() < 1) throw DataError("time points: need at least one time");
  if (!t_.allFinite()) throw DataError("time points: non-finite value");
  for (Eigen::Index i = 1; i < t_.size(); ++i) {
    if (!(t_(i) > t_(i - 1))) {
      std::ostringstream os;
      os << "time points: not strictly increasing at index " << i << " (" << t_(i - 1)
         << " then " << t_(i) << ")";
      throw DataError(os.str());
    }
  }
}

TimePoints TimePoints::range(Eigen::Index n) {
  return TimePoints(Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n)));
}

double TimePoints::min_gap() const {
  if (t_.size() < 2) return 1.0;
  return (t_.tail(t_.size() - 1) - t_.head(t_.size() - 1)).minCoeff();
}

TimePoints TimePoints::subset(const std::vector<Eigen::Index>& idx) const {
  Eigen::VectorXd s(static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) s(static_cast<Eigen::Index>(i)) = t_(idx[i]);
  return TimePoints(std::move(s));
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& y, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), y.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = y.row(idx[i]);
  return out;
}

void check_observations(const Eigen::MatrixXd& obs, const TimePoints& times) {
  if (obs.rows() != times.size()) {
    std::ostringstream os;
    os << "observations have " << obs.rows() << " rows but there are " << times.size()
       << " time points";
    throw DataError(os.str());
  }
  if (obs.cols() < 1) throw DataError("observations have no columns");
  if (!obs.allFinite()) throw DataError("observations contain non-finite values");
}

WeightScheme WeightScheme::shared(Eigen::VectorXd centers, double h0) {
  WeightScheme s;
  s.centers = std::move(centers);
  s.bandwidths = Eigen::VectorXd::Constant(1, h0);
  s.validate();
  return s;
}

WeightScheme WeightScheme::single() { return shared(Eigen::VectorXd::Zero(1), 1.0); }

void WeightScheme::validate() const {
  if (centers.size() < 1) throw ConfigError("weight scheme: need at least one center");
  if (!centers.allFinite()) throw ConfigError("weight scheme: non-finite center");
  if (bandwidths.size() != 1 && bandwidths.size() != centers.size()) {
    throw ConfigError("weight scheme: bandwidth count must be 1 or the number of centers");
  }
  if (!(bandwidths.array() > 0.0).all() || !bandwidths.allFinite()) {
    throw ConfigError("weight scheme: bandwidths must be positive and finite");
  }
}

Eigen::VectorXd eval_weights(double t, const WeightScheme& scheme) {
  const Eigen::Index d_count = scheme.size();
  if (d_count == 1) return Eigen::VectorXd::Ones(1);
  Eigen::VectorXd e(d_count);
  for (Eigen::Index d = 0; d < d_count; ++d) {
    const double z = (t - scheme.centers(d)) / scheme.bandwidth(d);
    e(d) = -z * z;
  }
  const double m = e.maxCoeff();
  // exp(m) is the largest raw kernel value.
  if (!(m >= std::log(1e-300))) {
    std::ostringstream os;
    os << "all kernel weights underflow at t=" << t << "; widen the bandwidth";
    throw DegenerateWeightsError(os.str());
  }
  Eigen::VectorXd w = (e.array() - m).exp();
  return w / w.sum();
}

Eigen::MatrixXd weight_matrix(const Eigen::VectorXd& times, const WeightScheme& scheme) {
  Eigen::MatrixXd w(times.size(), scheme.size());
  for (Eigen::Index n = 0; n < times.size(); ++n) w.row(n) = eval_weights(times(n), scheme).transpose();
  return w;
}

BasisSet BasisSet::identity(Eigen::Index d, Eigen::Index k) {
  BasisSet b;
  b.lambdas.assign(static_cast<size_t>(d), Eigen::MatrixXd::Identity(k, k));
  return b;
}

BasisInverses invert_basis(const BasisSet& basis) {
  BasisInverses out;
  const Eigen::Index d_count = basis.size();
  const Eigen::Index k = basis.dim();
  out.inv.reserve(static_cast<size_t>(d_count));
  out.log_det_inv.resize(d_count);
  out.flat.resize(d_count, k * k);
  for (Eigen::Index d = 0; d < d_count; ++d) {
    SpdFactor f(basis.lambdas[static_cast<size_t>(d)], "basis matrix " + std::to_string(d));
    out.inv.push_back(f.inverse());
    out.log_det_inv(d) = -f.log_det();
    out.flat.row(d) = Eigen::Map<const Eigen::RowVectorXd>(out.inv.back().data(), k * k);
  }
  return out;
}

Eigen::MatrixXd accumulate_precisions(const Eigen::MatrixXd& w, const BasisInverses& inv) {
  return w * inv.flat;
}

Eigen::MatrixXd unflatten(const Eigen::MatrixXd& flat, Eigen::Index row, Eigen::Index k) {
  Eigen::MatrixXd m(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) m(i, j) = flat(row, j * k + i);
  }
  return symmetrize(m);
}

Eigen::MatrixXd precision_at(double t, const BasisSet& basis, const WeightScheme& scheme) {
  if (basis.size() != scheme.size()) {
    throw ConfigError("basis count does not match the number of weight centers");
  }
  const Eigen::VectorXd w = eval_weights(t, scheme);
  const Eigen::Index k = basis.dim();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index d = 0; d < basis.size(); ++d) {
    if (w(d) == 0.0) continue;
    p += w(d) * spd_inverse(basis.lambdas[static_cast<size_t>(d)], "basis matrix");
  }
  return symmetrize(p);
}

Eigen::MatrixXd lambda_at(double t, const BasisSet& basis, const WeightScheme& scheme) {
  return spd_inverse(precision_at(t, basis, scheme), "accumulated basis precision");
}

Eigen::VectorXd FactorModelParams::sigma_vector_at(double t) const {
  if (!tv_sigma) return sigma;
  Eigen::VectorXd s(tv_sigma->coords());
  for (Eigen::Index q = 0; q < s.size(); ++q) s(q) = sigma_at(t, *this, q);
  return s;
}

void FactorModelParams::validate() const {
  if (basis.size() != weights.size()) {
    throw ConfigError("params: basis count does not match weight centers");
  }
  if (basis.dim() != B.cols()) throw ConfigError("params: basis dimension differs from K");
  if (tv_sigma) {
    if (tv_sigma->coords() != B.rows()) throw ConfigError("params: tv sigma coordinate count");
    for (const auto& v : tv_sigma->nu) {
      if (!(v.array() > 0.0).all()) throw ConfigError("params: nonpositive sigma basis value");
    }
  } else {
    if (sigma.size() != B.rows()) throw ConfigError("params: sigma length differs from Q");
    if (!(sigma.array() > 0.0).all()) throw ConfigError("params: sigma must be positive");
  }
}

double sigma_at(double t, const FactorModelParams& params, Eigen::Index q) {
  if (!params.tv_sigma) return params.sigma(q);
  const auto& tv = *params.tv_sigma;
  const Eigen::VectorXd& nu = tv.nu[static_cast<size_t>(q)];
  if (!(nu.array() > 0.0).all()) throw ConfigError("sigma basis values must be positive");
  const Eigen::VectorXd w = eval_weights(t, tv.scheme(q));
  return 1.0 / (w.array() / nu.array()).sum();
}

Eigen::MatrixXd marginal_covariance(double t, const FactorModelParams& params) {
  const Eigen::MatrixXd lam = lambda_at(t, params.basis, params.weights);
  Eigen::MatrixXd s = params.B * lam * params.B.transpose();
  s.diagonal() += params.sigma_vector_at(t);
  return symmetrize(s);
}

double lgamma_difference(double a, double b) {
  if (a < 1e6) return std::lgamma(a + b) - std::lgamma(a);
  // Stirling series difference; the leading terms cancel analytically.
  const double ab = a + b;
  double v = (ab - 0.5) * std::log1p(b / a) + b * std::log(a) - b;
  v += 1.0 / (12.0 * ab) - 1.0 / (12.0 * a);
  v -= 1.0 / (360.0 * ab * ab * ab) - 1.0 / (360.0 * a * a * a);
  return v;
}

double family_log_density(double quad, double log_det, Eigen::Index dim, const Family& family) {
  const double q = static_cast<double>(dim);
  if (family.kind == Family::Kind::kGaussian) {
    return -0.5 * (q * std::log(2.0 * std::numbers::pi) + log_det + quad);
  }
  const double nu = family.nu;
  if (!(nu > 0.0)) throw ConfigError("student-t degrees of freedom must be positive");
  return lgamma_difference(0.5 * nu, 0.5 * q) - 0.5 * q * std::log(nu * std::numbers::pi) -
         0.5 * log_det - 0.5 * (nu + q) * std::log1p(quad / nu);
}

FactorPosterior factor_posterior(const Eigen::VectorXd& y, const Eigen::MatrixXd& lambda_prec,
                                 const Eigen::MatrixXd& B, const Eigen::VectorXd& sigma) {
  const Eigen::VectorXd sinv = sigma.cwiseInverse();
  const Eigen::MatrixXd bts = B.transpose() * sinv.asDiagonal();
  Eigen::MatrixXd prec = lambda_prec + bts * B;
  SpdFactor pf(symmetrize(prec), "factor posterior precision");
  SpdFactor lf(lambda_prec, "basis precision");
  const Eigen::VectorXd v = bts * y;
  FactorPosterior out;
  out.psi = pf.inverse();
  out.eta = out.psi * v;
  out.quad = y.dot(sinv.cwiseProduct(y)) - v.dot(out.eta);
  out.log_det = sigma.array().log().sum() - lf.log_det() + pf.log_det();
  return out;
}

double log_density(const Eigen::VectorXd& y, double t, const FactorModelParams& params,
                   const Family& family) {
  if (y.size() != params.Q()) throw DataError("observation length differs from Q");
  const Eigen::MatrixXd prec = precision_at(t, params.basis, params.weights);
  const FactorPosterior fp = factor_posterior(y, prec, params.B, params.sigma_vector_at(t));
  return family_log_density(fp.quad, fp.log_det, y.size(), family);
}

double log_prior_basis(const BasisInverses& inv, const Eigen::MatrixXd& w) {
  const Eigen::Index k = inv.inv.empty() ? 0 : inv.inv.front().rows();
  if (inv.inv.size() <= 1) return 0.0;
  const Eigen::MatrixXd acc = accumulate_precisions(w, inv);
  double first = w.colwise().sum().dot(inv.log_det_inv);
  double second = 0.0;
  for (Eigen::Index n = 0; n < w.rows(); ++n) {
    second += spd_log_det(unflatten(acc, n, k), "accumulated basis precision");
  }
  return 0.5 * (first - second);
}

double log_prior_basis(const BasisSet& basis, const WeightScheme& scheme, const TimePoints& times,
                       double scale) {
  if (basis.size() != scheme.size()) {
    throw ConfigError("basis count does not match the number of weight centers");
  }
  if (basis.size() == 1) return 0.0;
  return scale * log_prior_basis(invert_basis(basis), weight_matrix(times.values(), scheme));
}

double log_prior_scalar(const Eigen::VectorXd& nu, const WeightScheme& scheme,
                        const TimePoints& times) {
  if (nu.size() != scheme.size()) throw ConfigError("scalar basis count differs from centers");
  if (!(nu.array() > 0.0).all()) throw ConfigError("scalar basis values must be positive");
  if (nu.size() == 1) return 0.0;
  const Eigen::MatrixXd w = weight_matrix(times.values(), scheme);
  const Eigen::VectorXd inv = nu.cwiseInverse();
  const Eigen::VectorXd acc = w * inv;
  return 0.5 * (w.colwise().sum().dot(inv.array().log().matrix()) - acc.array().log().sum());
}

double RegularizationConfig::prior_count(Eigen::Index k) const {
  if (!zeta) return 1e-8;
  return *zeta + static_cast<double>(k) + 1.0;
}

Eigen::MatrixXd RegularizationConfig::theta_matrix(Eigen::Index k) const {
  if (theta.size() == 0) return 1e-8 * Eigen::MatrixXd::Identity(k, k);
  if (theta.size() == 1) return theta(0, 0) * Eigen::MatrixXd::Identity(k, k);
  if (theta.rows() != k || theta.cols() != k) throw ConfigError("theta must be K x K");
  return theta;
}

double log_prior_inverse_wishart(const BasisInverses& inv, const RegularizationConfig& reg,
                                 Eigen::Index k) {
  const double c = reg.prior_count(k);
  const Eigen::MatrixXd theta = reg.theta_matrix(k);
  double v = 0.0;
  for (size_t d = 0; d < inv.inv.size(); ++d) {
    v += 0.5 * c * inv.log_det_inv(static_cast<Eigen::Index>(d)) -
         0.5 * (theta.cwiseProduct(inv.inv[d])).sum();
  }
  return v;
}

}  // namespace tvfactor
