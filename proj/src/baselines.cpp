#include "tvfactor/baselines.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"

namespace tvfactor {

namespace {

constexpr double kSigmaFloor = 1e-10;

/// Symmetric PSD square-root factor: lambda = L L'.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& lambda) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(lambda));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

double decay(double alpha, double dist) { return std::pow(alpha, std::abs(dist)); }

}  // namespace

Eigen::MatrixXd EwmaModel::lambda_at(double position) const {
  const Eigen::Index k = z.cols();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
  double total = 0.0;
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const double w = decay(alpha, position - positions(s));
    if (w == 0.0) continue;
    acc += w * z.row(s).transpose() * z.row(s);
    total += w;
  }
  if (!(total > 0.0)) throw NumericError("EWMA weights vanish at the query position");
  return symmetrize(acc / total);
}

Eigen::MatrixXd EwmaModel::covariance_at(double position) const {
  Eigen::MatrixXd s = W * lambda_at(position) * W.transpose();
  s.diagonal() += sigma;
  return symmetrize(s);
}

double EwmaModel::log_density(const Eigen::VectorXd& y, double position) const {
  return low_rank_log_density(y, W, lambda_at(position), sigma);
}

double low_rank_log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& w,
                            const Eigen::MatrixXd& lambda, const Eigen::VectorXd& sigma) {
  const Eigen::VectorXd sinv = sigma.cwiseInverse();
  const Eigen::MatrixXd wl = w * psd_factor(lambda);
  Eigen::MatrixXd m = wl.transpose() * sinv.asDiagonal() * wl;
  m.diagonal().array() += 1.0;
  SpdFactor f(symmetrize(m), "low-rank capacitance matrix");
  const Eigen::VectorXd v = wl.transpose() * sinv.cwiseProduct(y);
  const double quad = y.dot(sinv.cwiseProduct(y)) - v.dot(f.solve(v));
  const double log_det = sigma.array().log().sum() + f.log_det();
  return family_log_density(quad, log_det, y.size(), Family::gaussian());
}

EwmaModel ewma_fit(const Eigen::MatrixXd& obs, Eigen::Index k, double alpha,
                   const Eigen::VectorXd& positions) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("EWMA decay must lie in [0, 1]");
  if (k < 1 || k > std::min(obs.rows(), obs.cols())) {
    throw ConfigError("EWMA factor count must be between 1 and min(N, Q)");
  }
  if (!obs.allFinite()) throw DataError("observations contain non-finite values");
  EwmaModel m;
  m.alpha = alpha;
  m.positions = positions.size() == 0
                    ? Eigen::VectorXd::LinSpaced(obs.rows(), 1.0, static_cast<double>(obs.rows()))
                    : positions;
  if (m.positions.size() != obs.rows()) throw DataError("EWMA positions differ from row count");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(obs, Eigen::ComputeThinV);
  m.W = svd.matrixV().leftCols(k);
  m.z = obs * m.W;
  const Eigen::MatrixXd eps = obs - m.z * m.W.transpose();
  m.sigma = (eps.array().square().colwise().sum() / static_cast<double>(obs.rows()))
                .matrix()
                .transpose()
                .cwiseMax(kSigmaFloor);
  return m;
}

double ewma_loo_score(const EwmaModel& model, const Eigen::MatrixXd& obs) {
  const Eigen::Index n_count = model.z.rows();
  const Eigen::Index k = model.z.cols();
  if (obs.rows() != n_count) throw DataError("EWMA scoring rows differ from fitted rows");
  double total = 0.0;
  for (Eigen::Index n = 0; n < n_count; ++n) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
    double wsum = 0.0;
    for (Eigen::Index s = 0; s < n_count; ++s) {
      if (s == n) continue;
      const double w = decay(model.alpha, model.positions(n) - model.positions(s));
      if (w == 0.0) continue;
      acc += w * model.z.row(s).transpose() * model.z.row(s);
      wsum += w;
    }
    if (!(wsum > 0.0)) return -std::numeric_limits<double>::infinity();
    total += low_rank_log_density(obs.row(n).transpose(), model.W, acc / wsum, model.sigma);
  }
  return total;
}

std::vector<double> default_ewma_alphas() {
  std::vector<double> a;
  for (int i = 0; i <= 50; ++i) a.push_back(1.0 - 0.001 * i);
  return a;
}

EwmaSelection ewma_select(const Eigen::MatrixXd& obs, const std::vector<Eigen::Index>& ks,
                          const std::vector<double>& alphas, const Eigen::VectorXd& positions) {
  if (ks.empty() || alphas.empty()) throw ConfigError("EWMA selection grid is empty");
  EwmaSelection best;
  best.score = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (Eigen::Index k : ks) {
    for (double a : alphas) {
      const EwmaModel m = ewma_fit(obs, k, a, positions);
      const double s = ewma_loo_score(m, obs);
      if (!have || s > best.score) {
        best = {k, a, s};
        have = true;
      }
    }
  }
  return best;
}

NonFactorModel nonfactor_map(const Eigen::MatrixXd& obs, const TimePoints& times,
                             const WeightScheme& scheme) {
  check_observations(obs, times);
  const Eigen::MatrixXd w = weight_matrix(times.values(), scheme);
  NonFactorModel m;
  m.scheme = scheme;
  for (Eigen::Index d = 0; d < w.cols(); ++d) {
    const double total = w.col(d).sum();
    if (!(total > 0.0)) throw NumericError("basis receives zero total weight");
    m.basis.lambdas.push_back(symmetrize(obs.transpose() * w.col(d).asDiagonal() * obs / total));
  }
  return m;
}

Eigen::MatrixXd NadarayaWatson::at(double t) const {
  const Eigen::VectorXd dist = (times.array() - t).abs();
  const double dmin = dist.minCoeff();
  Eigen::VectorXd w(dist.size());
  for (Eigen::Index n = 0; n < dist.size(); ++n) {
    w(n) = dist(n) == dmin ? 1.0 : std::exp(-gamma * (dist(n) - dmin));
  }
  return symmetrize(factors.transpose() * w.asDiagonal() * factors / w.sum());
}

NadarayaWatson nadaraya_watson_cov(const Eigen::MatrixXd& factors, const Eigen::VectorXd& times,
                                   double gamma) {
  if (factors.rows() != times.size() || factors.rows() == 0) {
    throw DataError("factor rows differ from times");
  }
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
  return NadarayaWatson{factors, times, gamma};
}

}  // namespace tvfactor
