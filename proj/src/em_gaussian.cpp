#include "tvfactor/em_gaussian.hpp"

#include <cmath>
#include <sstream>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"
#include "tvfactor/random.hpp"

namespace tvfactor {

namespace {

/// N x Q matrix of Sigma_{t_n q}.
Eigen::MatrixXd sigma_matrix(const TimePoints& times, const FactorModelParams& params) {
  const Eigen::Index n_count = times.size();
  const Eigen::Index q_count = params.Q();
  if (!params.tv_sigma) return params.sigma.transpose().replicate(n_count, 1);
  const auto& tv = *params.tv_sigma;
  Eigen::MatrixXd prec(n_count, q_count);
  if (tv.schemes.size() == 1) {
    const Eigen::MatrixXd w = weight_matrix(times.values(), tv.schemes.front());
    Eigen::MatrixXd inv(w.cols(), q_count);
    for (Eigen::Index q = 0; q < q_count; ++q) inv.col(q) = tv.nu[static_cast<size_t>(q)].cwiseInverse();
    prec = w * inv;
  } else {
    for (Eigen::Index q = 0; q < q_count; ++q) {
      const Eigen::MatrixXd w = weight_matrix(times.values(), tv.scheme(q));
      prec.col(q) = w * tv.nu[static_cast<size_t>(q)].cwiseInverse();
    }
  }
  return prec.cwiseInverse();
}

double tv_sigma_prior(const TimePoints& times, const TimeVaryingSigma& tv) {
  double v = 0.0;
  for (Eigen::Index q = 0; q < tv.coords(); ++q) {
    v += log_prior_scalar(tv.nu[static_cast<size_t>(q)], tv.scheme(q), times);
  }
  return v;
}

void check_weight_totals(const Eigen::VectorXd& totals, const char* what) {
  for (Eigen::Index d = 0; d < totals.size(); ++d) {
    if (!(totals(d) > 0.0)) {
      std::ostringstream os;
      os << what << ": basis " << d << " receives zero total weight";
      throw NumericError(os.str());
    }
  }
}

}  // namespace

Eigen::MatrixXd EStepStats::second_moment(Eigen::Index n) const {
  const Eigen::VectorXd e = eta.row(n).transpose();
  const double a = xi2.size() == 0 ? 1.0 : xi2(n);
  return a * e * e.transpose() + psi[static_cast<size_t>(n)];
}

void FitConfig::validate() const {
  if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be positive");
  if (!(sigma_floor > 0.0)) throw ConfigError("sigma_floor must be positive");
}

FactorModelParams initial_params(Eigen::Index q, Eigen::Index k, const WeightScheme& scheme,
                                 std::uint64_t seed, bool tv_sigma) {
  if (q < 1 || k < 1) throw ConfigError("Q and K must be positive");
  FactorModelParams p;
  p.weights = scheme;
  p.basis = BasisSet::identity(scheme.size(), k);
  p.sigma = Eigen::VectorXd::Ones(q);
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 0.001);
  p.B.resize(q, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < q; ++i) p.B(i, j) = nd(rng);
  }
  if (tv_sigma) {
    TimeVaryingSigma tv;
    tv.schemes = {scheme};
    tv.nu.assign(static_cast<size_t>(q), Eigen::VectorXd::Ones(scheme.size()));
    p.tv_sigma = std::move(tv);
  }
  return p;
}

EStepStats posterior_pass(const Eigen::MatrixXd& obs, const TimePoints& times,
                          const FactorModelParams& params, const Family& family,
                          const RegularizationConfig& reg) {
  check_observations(obs, times);
  params.validate();
  if (obs.cols() != params.Q()) throw DataError("observation width differs from Q");
  const Eigen::Index n_count = obs.rows();
  const Eigen::Index k = params.K();

  const Eigen::MatrixXd w = weight_matrix(times.values(), params.weights);
  const BasisInverses inv = invert_basis(params.basis);
  const Eigen::MatrixXd acc = accumulate_precisions(w, inv);

  EStepStats s;
  s.eta.resize(n_count, k);
  s.psi.resize(static_cast<size_t>(n_count));
  s.quad.resize(n_count);
  s.log_det.resize(n_count);
  if (family.robust()) s.xi2.resize(n_count);

  const bool tv = params.tv_sigma.has_value();
  const Eigen::MatrixXd sig = sigma_matrix(times, params);
  Eigen::MatrixXd bsb;
  Eigen::MatrixXd v_all;
  Eigen::VectorXd yq_all;
  double log_sigma = 0.0;
  if (!tv) {
    const Eigen::VectorXd sinv = params.sigma.cwiseInverse();
    const Eigen::MatrixXd bs = sinv.asDiagonal() * params.B;
    bsb = symmetrize(params.B.transpose() * bs);
    v_all = obs * bs;
    yq_all = obs.array().square().matrix() * sinv;
    log_sigma = params.sigma.array().log().sum();
  }

  double loglik = 0.0;
  double prior_second = 0.0;
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::MatrixXd lp = unflatten(acc, n, k);
    SpdFactor lf(lp, "basis precision at t=" + std::to_string(times[n]));
    Eigen::VectorXd v;
    double yq;
    Eigen::MatrixXd prec;
    double ls;
    if (tv) {
      const Eigen::VectorXd sinv = sig.row(n).transpose().cwiseInverse();
      const Eigen::MatrixXd bs = sinv.asDiagonal() * params.B;
      prec = lp + symmetrize(params.B.transpose() * bs);
      v = bs.transpose() * obs.row(n).transpose();
      yq = obs.row(n).array().square().matrix().dot(sinv);
      ls = sig.row(n).array().log().sum();
    } else {
      prec = lp + bsb;
      v = v_all.row(n).transpose();
      yq = yq_all(n);
      ls = log_sigma;
    }
    SpdFactor pf(prec, "factor posterior precision at t=" + std::to_string(times[n]));
    Eigen::MatrixXd psi = pf.inverse();
    const Eigen::VectorXd eta = psi * v;
    s.eta.row(n) = eta.transpose();
    s.psi[static_cast<size_t>(n)] = std::move(psi);
    s.quad(n) = yq - v.dot(eta);
    s.log_det(n) = ls - lf.log_det() + pf.log_det();
    if (family.robust()) {
      const double q = static_cast<double>(obs.cols());
      s.xi2(n) = (family.nu + q) / (family.nu + s.quad(n));
    }
    loglik += family_log_density(s.quad(n), s.log_det(n), obs.cols(), family);
    prior_second += lf.log_det();
  }
  double prior = 0.0;
  if (params.basis.size() > 1) {
    prior = 0.5 * (w.colwise().sum().dot(inv.log_det_inv) - prior_second);
  }
  if (reg.mode == RegularizationConfig::Mode::kInverseWishart) {
    prior += log_prior_inverse_wishart(inv, reg, k);
  }
  if (tv) prior += tv_sigma_prior(times, *params.tv_sigma);
  s.objective = loglik + prior;
  return s;
}

EStepStats e_step(const Eigen::MatrixXd& obs, const TimePoints& times,
                  const FactorModelParams& params) {
  return posterior_pass(obs, times, params, Family::gaussian());
}

BasisSet update_basis(const EStepStats& stats, const TimePoints& times, const WeightScheme& scheme,
                      const RegularizationConfig& reg) {
  const Eigen::Index n_count = stats.size();
  const Eigen::Index k = stats.eta.cols();
  if (times.size() != n_count) throw DataError("stats and times differ in length");
  Eigen::MatrixXd sflat(n_count, k * k);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::MatrixXd sm = stats.second_moment(n);
    sflat.row(n) = Eigen::Map<const Eigen::RowVectorXd>(sm.data(), k * k);
  }
  const Eigen::MatrixXd w = weight_matrix(times.values(), scheme);
  const Eigen::VectorXd totals = w.colwise().sum().transpose();
  const Eigen::MatrixXd num = w.transpose() * sflat;  // D x K^2

  BasisSet out;
  out.lambdas.reserve(static_cast<size_t>(w.cols()));
  const bool iw = reg.mode == RegularizationConfig::Mode::kInverseWishart;
  if (!iw) check_weight_totals(totals, "basis update");
  const double c = iw ? reg.prior_count(k) : 0.0;
  const Eigen::MatrixXd theta = iw ? reg.theta_matrix(k) : Eigen::MatrixXd();
  if (iw && !(c > 0.0)) throw ConfigError("inverse-Wishart prior needs zeta + K + 1 > 0");
  for (Eigen::Index d = 0; d < w.cols(); ++d) {
    Eigen::MatrixXd lam = unflatten(num, d, k);
    if (iw) {
      lam = (theta + lam) / (c + totals(d));
    } else {
      lam /= totals(d);
      if (reg.mode == RegularizationConfig::Mode::kDiagonal) {
        lam = Eigen::MatrixXd(lam.diagonal().asDiagonal());
      }
    }
    out.lambdas.push_back(symmetrize(lam));
  }
  return out;
}

FactorModelParams m_step(const Eigen::MatrixXd& obs, const TimePoints& times,
                         const EStepStats& stats, const WeightScheme& scheme,
                         const RegularizationConfig& reg, double sigma_floor) {
  check_observations(obs, times);
  const Eigen::Index n_count = obs.rows();
  const Eigen::Index k = stats.eta.cols();
  FactorModelParams p;
  p.weights = scheme;
  p.basis = update_basis(stats, times, scheme, reg);

  Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd psi_sum = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    ss += stats.second_moment(n);
    psi_sum += stats.psi[static_cast<size_t>(n)];
  }
  Eigen::MatrixXd h_weighted = stats.eta;  // rows xi2_n eta_n'
  if (stats.xi2.size() > 0) h_weighted = stats.xi2.asDiagonal() * stats.eta;
  const Eigen::MatrixXd r = obs.transpose() * h_weighted;  // Q x K
  p.B = solve_right_spd(r, symmetrize(ss),
                        "sum of factor second moments in the loading update (consider "
                        "inverse-Wishart regularization)");

  const Eigen::MatrixXd resid = obs - stats.eta * p.B.transpose();
  Eigen::VectorXd rs;
  if (stats.xi2.size() > 0) {
    rs = (stats.xi2.asDiagonal() * resid.array().square().matrix()).colwise().sum().transpose();
  } else {
    rs = resid.array().square().colwise().sum().transpose();
  }
  const Eigen::VectorXd quad_psi = ((p.B * psi_sum).array() * p.B.array()).rowwise().sum();
  p.sigma = ((rs + quad_psi) / static_cast<double>(n_count)).cwiseMax(sigma_floor);
  return p;
}

TvSigmaUpdate cm_step_tv_sigma(const Eigen::MatrixXd& obs, const TimePoints& times,
                               const EStepStats& stats, const FactorModelParams& current,
                               double sigma_floor) {
  if (!current.tv_sigma) throw ConfigError("time-varying sigma update needs tv sigma params");
  check_observations(obs, times);
  const Eigen::Index n_count = obs.rows();
  const Eigen::Index q_count = obs.cols();
  const Eigen::Index k = stats.eta.cols();
  const Eigen::MatrixXd sig = sigma_matrix(times, current);
  const Eigen::MatrixXd sinv = sig.cwiseInverse();

  Eigen::MatrixXd sflat(n_count, k * k);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::MatrixXd sm = stats.second_moment(n);
    sflat.row(n) = Eigen::Map<const Eigen::RowVectorXd>(sm.data(), k * k);
  }
  const Eigen::MatrixXd g = sflat.transpose() * sinv;  // K^2 x Q
  Eigen::MatrixXd h_weighted = stats.eta;
  if (stats.xi2.size() > 0) h_weighted = stats.xi2.asDiagonal() * stats.eta;
  const Eigen::MatrixXd r = h_weighted.transpose() * obs.cwiseProduct(sinv);  // K x Q

  TvSigmaUpdate out;
  out.B.resize(q_count, k);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    Eigen::MatrixXd aq(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < k; ++i) aq(i, j) = g(j * k + i, q);
    }
    SpdFactor f(symmetrize(aq), "weighted second moments in the loading update");
    out.B.row(q) = f.solve(Eigen::VectorXd(r.col(q))).transpose();
  }

  // Per-point squared residual terms with the new loadings.
  Eigen::MatrixXd e = (obs - stats.eta * out.B.transpose()).array().square().matrix();
  if (stats.xi2.size() > 0) e = stats.xi2.asDiagonal() * e;
  for (Eigen::Index n = 0; n < n_count; ++n) {
    e.row(n) += ((out.B * stats.psi[static_cast<size_t>(n)]).array() * out.B.array())
                    .rowwise()
                    .sum()
                    .transpose()
                    .matrix();
  }

  const auto& tv = *current.tv_sigma;
  out.nu.resize(static_cast<size_t>(q_count));
  if (tv.schemes.size() == 1) {
    const Eigen::MatrixXd w = weight_matrix(times.values(), tv.schemes.front());
    const Eigen::VectorXd totals = w.colwise().sum().transpose();
    check_weight_totals(totals, "variance basis update");
    const Eigen::MatrixXd num = w.transpose() * e;  // D x Q
    for (Eigen::Index q = 0; q < q_count; ++q) {
      out.nu[static_cast<size_t>(q)] = num.col(q).cwiseQuotient(totals).cwiseMax(sigma_floor);
    }
  } else {
    for (Eigen::Index q = 0; q < q_count; ++q) {
      const Eigen::MatrixXd w = weight_matrix(times.values(), tv.scheme(q));
      const Eigen::VectorXd totals = w.colwise().sum().transpose();
      check_weight_totals(totals, "variance basis update");
      out.nu[static_cast<size_t>(q)] =
          (w.transpose() * e.col(q)).cwiseQuotient(totals).cwiseMax(sigma_floor);
    }
  }
  return out;
}

FactorModelParams update_params(const Eigen::MatrixXd& obs, const TimePoints& times,
                                const EStepStats& stats, const FactorModelParams& current,
                                const FitConfig& config) {
  if (!current.tv_sigma) {
    return m_step(obs, times, stats, current.weights, config.regularization, config.sigma_floor);
  }
  FactorModelParams p = current;
  p.basis = update_basis(stats, times, current.weights, config.regularization);
  TvSigmaUpdate u = cm_step_tv_sigma(obs, times, stats, current, config.sigma_floor);
  p.B = std::move(u.B);
  p.tv_sigma->nu = std::move(u.nu);
  return p;
}

double log_joint_posterior(const Eigen::MatrixXd& obs, const TimePoints& times,
                           const FactorModelParams& params, const RegularizationConfig& reg) {
  return posterior_pass(obs, times, params, Family::gaussian(), reg).objective;
}

FitResult fit_family(const Eigen::MatrixXd& obs, const TimePoints& times,
                     const WeightScheme& scheme, const FitConfig& config, const Family& family,
                     const std::optional<FactorModelParams>& init, const IterationHook& hook,
                     Eigen::Index k) {
  config.validate();
  check_observations(obs, times);
  if (obs.rows() < 2) throw DataError("fitting needs at least two observations");
  scheme.validate();
  FactorModelParams params;
  if (init) {
    params = *init;
  } else {
    if (k < 1) throw ConfigError("number of factors must be positive");
    params = initial_params(obs.cols(), k, scheme, config.seed, config.tv_sigma);
  }

  FitResult res;
  EStepStats stats;
  for (int iter = 0;; ++iter) {
    try {
      stats = posterior_pass(obs, times, params, family, config.regularization);
      if (hook && hook(iter, params, stats)) {
        stats = posterior_pass(obs, times, params, family, config.regularization);
        res.report.trace_start = static_cast<int>(res.report.trace.size());
      }
    } catch (const NumericError& e) {
      throw NumericError("E-step at iteration " + std::to_string(iter) + ": " + e.what());
    }
    res.report.trace.push_back(stats.objective);
    const auto& tr = res.report.trace;
    if (static_cast<int>(tr.size()) - res.report.trace_start >= 2) {
      const double prev = tr[tr.size() - 2];
      if (std::abs(stats.objective - prev) <= config.rel_tol * std::abs(prev)) {
        res.report.converged = true;
        break;
      }
    }
    if (iter >= config.max_iter) break;
    try {
      params = update_params(obs, times, stats, params, config);
    } catch (const NumericError& e) {
      throw NumericError("M-step at iteration " + std::to_string(iter) + ": " + e.what());
    }
    res.report.iterations = iter + 1;
  }
  res.params = std::move(params);
  res.stats = std::move(stats);
  return res;
}

FitResult fit(const Eigen::MatrixXd& obs, const TimePoints& times, const WeightScheme& scheme,
              const FitConfig& config, Eigen::Index k,
              const std::optional<FactorModelParams>& init) {
  return fit_family(obs, times, scheme, config, Family::gaussian(), init, {}, k);
}

}  // namespace tvfactor
