#include "tvfactor/em_spatiotemporal.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"
#include "tvfactor/random.hpp"

namespace tvfactor {

namespace {

Eigen::MatrixXd vec(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

/// Weighted precisions sum_d w(n,d) basis_d^{-1} for all n, plus their inverses' log-dets.
struct Precisions {
  std::vector<Eigen::MatrixXd> prec;
  Eigen::VectorXd log_det;  // log|prec_n|
  double prior = 0.0;       // unscaled improper prior value
};

Precisions basis_precisions(const BasisSet& basis, const WeightScheme& scheme,
                            const TimePoints& times, const char* what) {
  if (basis.size() != scheme.size()) {
    throw ConfigError(std::string(what) + ": basis count differs from weight centers");
  }
  const Eigen::MatrixXd w = weight_matrix(times.values(), scheme);
  const BasisInverses inv = invert_basis(basis);
  const Eigen::MatrixXd acc = accumulate_precisions(w, inv);
  const Eigen::Index k = basis.dim();
  Precisions out;
  out.prec.reserve(static_cast<size_t>(times.size()));
  out.log_det.resize(times.size());
  for (Eigen::Index n = 0; n < times.size(); ++n) {
    out.prec.push_back(unflatten(acc, n, k));
    out.log_det(n) = spd_log_det(out.prec.back(), what);
  }
  if (basis.size() > 1) {
    out.prior = 0.5 * (w.colwise().sum().dot(inv.log_det_inv) - out.log_det.sum());
  }
  return out;
}

Eigen::VectorXd weight_totals(const Eigen::MatrixXd& w, const char* what) {
  Eigen::VectorXd totals = w.colwise().sum().transpose();
  for (Eigen::Index d = 0; d < totals.size(); ++d) {
    if (!(totals(d) > 0.0)) {
      std::ostringstream os;
      os << what << ": basis " << d << " receives zero total weight";
      throw NumericError(os.str());
    }
  }
  return totals;
}

/// sum_n psi_n block (i, j), for all i, j.
std::vector<Eigen::MatrixXd> summed_blocks(const STEStepStats& s) {
  std::vector<Eigen::MatrixXd> out(static_cast<size_t>(s.kp * s.kp),
                                   Eigen::MatrixXd::Zero(s.kq, s.kq));
  for (Eigen::Index n = 0; n < s.size(); ++n) {
    for (Eigen::Index j = 0; j < s.kp; ++j) {
      for (Eigen::Index i = 0; i < s.kp; ++i) out[static_cast<size_t>(j * s.kp + i)] += s.block(n, i, j);
    }
  }
  return out;
}

const Eigen::MatrixXd& blk(const std::vector<Eigen::MatrixXd>& b, Eigen::Index kp, Eigen::Index i,
                           Eigen::Index j) {
  return b[static_cast<size_t>(j * kp + i)];
}

}  // namespace

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

void SpatioTemporalParams::validate() const {
  if (sigma.size() != B.rows() || phi.size() != C.rows()) {
    throw ConfigError("spatiotemporal params: diagonal lengths differ from loadings");
  }
  if (!(sigma.array() > 0.0).all() || !(phi.array() > 0.0).all()) {
    throw ConfigError("spatiotemporal params: diagonals must be positive");
  }
  if (L.size() != omega.size()) throw ConfigError("spatiotemporal params: L count vs omega");
  if (variant == StVariant::kA) {
    if (L.dim() != KQ() * KP()) throw ConfigError("variant A basis must be K_Q*K_P square");
  } else {
    if (L.dim() != KQ()) throw ConfigError("variant B basis L must be K_Q square");
    if (G.size() != rho.size()) throw ConfigError("spatiotemporal params: G count vs rho");
    if (G.dim() != KP()) throw ConfigError("variant B basis G must be K_P square");
  }
}

void check_panel(const Panel& obs, const TimePoints& times) {
  if (static_cast<Eigen::Index>(obs.size()) != times.size()) {
    throw DataError("panel length differs from the number of time points");
  }
  if (obs.empty()) throw DataError("empty panel");
  for (const auto& y : obs) {
    if (y.rows() != obs.front().rows() || y.cols() != obs.front().cols()) {
      throw DataError("panel slices differ in shape");
    }
    if (!y.allFinite()) throw DataError("panel contains non-finite values");
  }
}

SpatioTemporalParams st_initial_params(StVariant variant, Eigen::Index q, Eigen::Index p,
                                       Eigen::Index kq, Eigen::Index kp, const WeightScheme& omega,
                                       const WeightScheme& rho, std::uint64_t seed) {
  if (q < 1 || p < 1 || kq < 1 || kp < 1) throw ConfigError("dimensions must be positive");
  SpatioTemporalParams s;
  s.variant = variant;
  Rng rng(seed);
  std::normal_distribution<double> small(0.0, 0.001);
  std::normal_distribution<double> unit(0.0, 1.0);
  s.B.resize(q, kq);
  for (Eigen::Index j = 0; j < kq; ++j) {
    for (Eigen::Index i = 0; i < q; ++i) s.B(i, j) = small(rng);
  }
  s.C.resize(p, kp);
  for (Eigen::Index j = 0; j < kp; ++j) {
    for (Eigen::Index i = 0; i < p; ++i) s.C(i, j) = unit(rng);
  }
  s.sigma = Eigen::VectorXd::Ones(q);
  s.phi = Eigen::VectorXd::Ones(p);
  s.omega = omega;
  if (variant == StVariant::kA) {
    s.L = BasisSet::identity(omega.size(), kq * kp);
  } else {
    s.L = BasisSet::identity(omega.size(), kq);
    s.rho = rho;
    s.G = BasisSet::identity(rho.size(), kp);
  }
  return s;
}

STEStepStats e_step_st(const Panel& obs, const TimePoints& times,
                       const SpatioTemporalParams& params) {
  check_panel(obs, times);
  params.validate();
  const Eigen::Index q = params.Q();
  const Eigen::Index p = params.P();
  if (obs.front().rows() != q || obs.front().cols() != p) {
    throw DataError("panel slice shape differs from Q x P of the parameters");
  }
  const Eigen::Index kq = params.KQ();
  const Eigen::Index kp = params.KP();
  const Eigen::VectorXd sinv = params.sigma.cwiseInverse();
  const Eigen::VectorXd pinv = params.phi.cwiseInverse();
  const Eigen::MatrixXd bs = sinv.asDiagonal() * params.B;      // Sigma^{-1} B
  const Eigen::MatrixXd cp = pinv.asDiagonal() * params.C;      // Phi^{-1} C
  const Eigen::MatrixXd data_prec =
      kron(symmetrize(params.C.transpose() * cp), symmetrize(params.B.transpose() * bs));
  const double log_d = static_cast<double>(q) * params.phi.array().log().sum() +
                       static_cast<double>(p) * params.sigma.array().log().sum();
  const Eigen::MatrixXd dinv = sinv * pinv.transpose();  // entrywise 1/(Sigma_q Phi_p)

  const Precisions lam = basis_precisions(params.L, params.omega, times, "basis precision");
  Precisions gam;
  double prior = 0.0;
  if (params.variant == StVariant::kA) {
    prior = lam.prior;
  } else {
    gam = basis_precisions(params.G, params.rho, times, "column basis precision");
    prior = static_cast<double>(kp) * lam.prior + static_cast<double>(kq) * gam.prior;
  }

  STEStepStats s;
  s.kq = kq;
  s.kp = kp;
  s.eta.resize(obs.size());
  s.psi.resize(obs.size());
  const double dim = static_cast<double>(q * p);
  double loglik = 0.0;
  for (Eigen::Index n = 0; n < times.size(); ++n) {
    const Eigen::MatrixXd& y = obs[static_cast<size_t>(n)];
    Eigen::MatrixXd prior_prec;
    double prior_log_det;
    if (params.variant == StVariant::kA) {
      prior_prec = lam.prec[static_cast<size_t>(n)];
      prior_log_det = lam.log_det(n);
    } else {
      prior_prec = kron(gam.prec[static_cast<size_t>(n)], lam.prec[static_cast<size_t>(n)]);
      prior_log_det = static_cast<double>(kq) * gam.log_det(n) + static_cast<double>(kp) * lam.log_det(n);
    }
    SpdFactor pf(symmetrize(prior_prec + data_prec),
                 "factor posterior precision at t=" + std::to_string(times[n]));
    Eigen::MatrixXd psi = pf.inverse();
    const Eigen::MatrixXd vm = bs.transpose() * y * cp;  // K_Q x K_P
    const Eigen::VectorXd v = vec(vm);
    const Eigen::VectorXd e = psi * v;
    s.eta[static_cast<size_t>(n)] = Eigen::Map<const Eigen::MatrixXd>(e.data(), kq, kp);
    s.psi[static_cast<size_t>(n)] = std::move(psi);
    const double quad = (y.array().square() * dinv.array()).sum() - v.dot(e);
    const double log_det = log_d - prior_log_det + pf.log_det();
    loglik += -0.5 * (dim * std::log(2.0 * std::numbers::pi) + log_det + quad);
  }
  s.objective = loglik + prior;
  return s;
}

Eigen::MatrixXd st_marginal_covariance(double t, const SpatioTemporalParams& params) {
  params.validate();
  Eigen::MatrixXd cov;
  if (params.variant == StVariant::kA) {
    const Eigen::MatrixXd cb = kron(params.C, params.B);
    cov = cb * lambda_at(t, params.L, params.omega) * cb.transpose();
  } else {
    const Eigen::MatrixXd g = lambda_at(t, params.G, params.rho);
    const Eigen::MatrixXd l = lambda_at(t, params.L, params.omega);
    cov = kron(params.C * g * params.C.transpose(), params.B * l * params.B.transpose());
  }
  cov.diagonal() += kron(params.phi, params.sigma);
  return symmetrize(cov);
}

double st_log_joint_posterior(const Panel& obs, const TimePoints& times,
                              const SpatioTemporalParams& params) {
  return e_step_st(obs, times, params).objective;
}

BasisSet st_update_gamma(const STEStepStats& stats, const TimePoints& times,
                         const SpatioTemporalParams& params) {
  if (params.variant != StVariant::kB) throw ConfigError("gamma update applies to variant B");
  const Eigen::Index kq = stats.kq;
  const Eigen::Index kp = stats.kp;
  const Precisions lam = basis_precisions(params.L, params.omega, times, "basis precision");
  const Eigen::MatrixXd rw = weight_matrix(times.values(), params.rho);
  const Eigen::VectorXd totals = weight_totals(rw, "column basis update");
  std::vector<Eigen::MatrixXd> num(static_cast<size_t>(rw.cols()), Eigen::MatrixXd::Zero(kp, kp));
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd& li = lam.prec[static_cast<size_t>(n)];
    const Eigen::MatrixXd& eta = stats.eta[static_cast<size_t>(n)];
    Eigen::MatrixXd m = eta.transpose() * li * eta;
    for (Eigen::Index j = 0; j < kp; ++j) {
      for (Eigen::Index i = 0; i < kp; ++i) m(i, j) += (stats.block(n, i, j).cwiseProduct(li)).sum();
    }
    for (Eigen::Index d = 0; d < rw.cols(); ++d) {
      if (rw(n, d) != 0.0) num[static_cast<size_t>(d)] += rw(n, d) * m;
    }
  }
  BasisSet out;
  for (Eigen::Index d = 0; d < rw.cols(); ++d) {
    out.lambdas.push_back(
        symmetrize(num[static_cast<size_t>(d)] / (static_cast<double>(kq) * totals(d))));
  }
  return out;
}

BasisSet st_update_lambda(const STEStepStats& stats, const TimePoints& times,
                          const SpatioTemporalParams& params) {
  const Eigen::Index kq = stats.kq;
  const Eigen::Index kp = stats.kp;
  const Eigen::MatrixXd w = weight_matrix(times.values(), params.omega);
  const Eigen::VectorXd totals = weight_totals(w, "basis update");
  BasisSet out;
  if (params.variant == StVariant::kA) {
    const Eigen::Index k = kq * kp;
    std::vector<Eigen::MatrixXd> num(static_cast<size_t>(w.cols()), Eigen::MatrixXd::Zero(k, k));
    for (Eigen::Index n = 0; n < stats.size(); ++n) {
      const Eigen::VectorXd e = vec(stats.eta[static_cast<size_t>(n)]);
      const Eigen::MatrixXd m = e * e.transpose() + stats.psi[static_cast<size_t>(n)];
      for (Eigen::Index d = 0; d < w.cols(); ++d) {
        if (w(n, d) != 0.0) num[static_cast<size_t>(d)] += w(n, d) * m;
      }
    }
    for (Eigen::Index d = 0; d < w.cols(); ++d) {
      out.lambdas.push_back(symmetrize(num[static_cast<size_t>(d)] / totals(d)));
    }
    return out;
  }
  const Precisions gam = basis_precisions(params.G, params.rho, times, "column basis precision");
  std::vector<Eigen::MatrixXd> num(static_cast<size_t>(w.cols()), Eigen::MatrixXd::Zero(kq, kq));
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd& gi = gam.prec[static_cast<size_t>(n)];
    const Eigen::MatrixXd& eta = stats.eta[static_cast<size_t>(n)];
    Eigen::MatrixXd m = eta * gi * eta.transpose();
    for (Eigen::Index j = 0; j < kp; ++j) {
      for (Eigen::Index i = 0; i < kp; ++i) m += gi(i, j) * stats.block(n, i, j);
    }
    for (Eigen::Index d = 0; d < w.cols(); ++d) {
      if (w(n, d) != 0.0) num[static_cast<size_t>(d)] += w(n, d) * m;
    }
  }
  for (Eigen::Index d = 0; d < w.cols(); ++d) {
    out.lambdas.push_back(
        symmetrize(num[static_cast<size_t>(d)] / (static_cast<double>(kp) * totals(d))));
  }
  return out;
}

Eigen::VectorXd st_update_phi(const Panel& obs, const STEStepStats& stats,
                              const SpatioTemporalParams& params, double floor) {
  const Eigen::Index q = params.Q();
  const Eigen::Index p = params.P();
  const Eigen::Index kp = stats.kp;
  const double nd = static_cast<double>(stats.size());
  const Eigen::VectorXd sinv = params.sigma.cwiseInverse();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(p);
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd r =
        obs[static_cast<size_t>(n)] - params.B * stats.eta[static_cast<size_t>(n)] * params.C.transpose();
    acc += (sinv.asDiagonal() * r.array().square().matrix()).colwise().sum().transpose();
  }
  const Eigen::MatrixXd m = params.B.transpose() * sinv.asDiagonal() * params.B;
  const auto blocks = summed_blocks(stats);
  Eigen::MatrixXd t(kp, kp);
  for (Eigen::Index j = 0; j < kp; ++j) {
    for (Eigen::Index i = 0; i < kp; ++i) t(i, j) = (m * blk(blocks, kp, i, j)).trace();
  }
  acc += ((params.C * t).array() * params.C.array()).rowwise().sum().matrix();
  return (acc / (static_cast<double>(q) * nd)).cwiseMax(floor);
}

Eigen::VectorXd st_update_sigma(const Panel& obs, const STEStepStats& stats,
                                const SpatioTemporalParams& params, double floor) {
  const Eigen::Index q = params.Q();
  const Eigen::Index p = params.P();
  const Eigen::Index kp = stats.kp;
  const double nd = static_cast<double>(stats.size());
  const Eigen::VectorXd pinv = params.phi.cwiseInverse();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(q);
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd r =
        obs[static_cast<size_t>(n)] - params.B * stats.eta[static_cast<size_t>(n)] * params.C.transpose();
    acc += (r.array().square().matrix() * pinv);
  }
  const Eigen::MatrixXd nm = params.C.transpose() * pinv.asDiagonal() * params.C;
  const auto blocks = summed_blocks(stats);
  Eigen::MatrixXd ps = Eigen::MatrixXd::Zero(stats.kq, stats.kq);
  for (Eigen::Index j = 0; j < kp; ++j) {
    for (Eigen::Index i = 0; i < kp; ++i) ps += nm(i, j) * blk(blocks, kp, i, j);
  }
  acc += ((params.B * ps).array() * params.B.array()).rowwise().sum().matrix();
  return (acc / (static_cast<double>(p) * nd)).cwiseMax(floor);
}

Eigen::MatrixXd st_update_C(const Panel& obs, const STEStepStats& stats,
                            const SpatioTemporalParams& params) {
  const Eigen::Index kp = stats.kp;
  const Eigen::VectorXd sinv = params.sigma.cwiseInverse();
  const Eigen::MatrixXd bs = sinv.asDiagonal() * params.B;
  const Eigen::MatrixXd m = params.B.transpose() * bs;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(params.P(), kp);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(kp, kp);
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd& eta = stats.eta[static_cast<size_t>(n)];
    lhs += obs[static_cast<size_t>(n)].transpose() * bs * eta;
    rhs += eta.transpose() * m * eta;
  }
  const auto blocks = summed_blocks(stats);
  for (Eigen::Index j = 0; j < kp; ++j) {
    for (Eigen::Index i = 0; i < kp; ++i) rhs(i, j) += (m * blk(blocks, kp, i, j)).trace();
  }
  return solve_right_spd(lhs, symmetrize(rhs), "normal equations of the column loadings");
}

Eigen::MatrixXd st_update_B(const Panel& obs, const STEStepStats& stats,
                            const SpatioTemporalParams& params) {
  const Eigen::Index kp = stats.kp;
  const Eigen::VectorXd pinv = params.phi.cwiseInverse();
  const Eigen::MatrixXd cp = pinv.asDiagonal() * params.C;
  const Eigen::MatrixXd nm = params.C.transpose() * cp;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(params.Q(), stats.kq);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(stats.kq, stats.kq);
  for (Eigen::Index n = 0; n < stats.size(); ++n) {
    const Eigen::MatrixXd& eta = stats.eta[static_cast<size_t>(n)];
    lhs += obs[static_cast<size_t>(n)] * cp * eta.transpose();
    rhs += eta * nm * eta.transpose();
  }
  const auto blocks = summed_blocks(stats);
  for (Eigen::Index j = 0; j < kp; ++j) {
    for (Eigen::Index i = 0; i < kp; ++i) rhs += nm(i, j) * blk(blocks, kp, i, j);
  }
  return solve_right_spd(lhs, symmetrize(rhs), "normal equations of the row loadings");
}

SpatioTemporalParams ecm_step_st(const Panel& obs, const TimePoints& times,
                                 const STEStepStats& stats, const SpatioTemporalParams& params,
                                 const StFitConfig& config) {
  SpatioTemporalParams p = params;
  if (p.variant == StVariant::kB && !config.freeze_gamma) p.G = st_update_gamma(stats, times, p);
  p.L = st_update_lambda(stats, times, p);
  if (!config.freeze_spatial) p.phi = st_update_phi(obs, stats, p, config.floor);
  if (config.order == StUpdateOrder::kEquationOrder) {
    p.sigma = st_update_sigma(obs, stats, p, config.floor);
    if (!config.freeze_spatial) p.C = st_update_C(obs, stats, p);
    p.B = st_update_B(obs, stats, p);
  } else {
    if (!config.freeze_spatial) p.C = st_update_C(obs, stats, p);
    p.B = st_update_B(obs, stats, p);
    p.sigma = st_update_sigma(obs, stats, p, config.floor);
  }
  return p;
}

StFitResult fit_st(const Panel& obs, const TimePoints& times, const SpatioTemporalParams& init,
                   const StFitConfig& config) {
  if (config.max_iter < 1 || !(config.rel_tol > 0.0)) throw ConfigError("invalid fit tolerances");
  check_panel(obs, times);
  if (obs.size() < 2) throw DataError("fitting needs at least two observations");
  StFitResult res;
  SpatioTemporalParams p = init;
  for (int iter = 0;; ++iter) {
    STEStepStats stats;
    try {
      stats = e_step_st(obs, times, p);
    } catch (const NumericError& e) {
      throw NumericError("E-step at iteration " + std::to_string(iter) + ": " + e.what());
    }
    res.report.trace.push_back(stats.objective);
    const auto& tr = res.report.trace;
    if (tr.size() >= 2 &&
        std::abs(tr.back() - tr[tr.size() - 2]) <= config.rel_tol * std::abs(tr[tr.size() - 2])) {
      res.report.converged = true;
      break;
    }
    if (iter >= config.max_iter) break;
    try {
      p = ecm_step_st(obs, times, stats, p, config);
    } catch (const NumericError& e) {
      throw NumericError("conditional M-step at iteration " + std::to_string(iter) + ": " + e.what());
    }
    res.report.iterations = iter + 1;
  }
  if (config.normalize_phi && !config.freeze_spatial) {
    const double g = std::exp(p.phi.array().log().mean());
    p.phi /= g;
    p.sigma *= g;
  }
  res.params = std::move(p);
  return res;
}

}  // namespace tvfactor
