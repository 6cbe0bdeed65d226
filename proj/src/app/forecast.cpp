#include "tvfactor/app/forecast.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "tvfactor/baselines.hpp"
#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"
#include "tvfactor/random.hpp"

namespace tvfactor::app {

Eigen::MatrixXd perturbed_basis(const Eigen::MatrixXd& lambda, double scale, std::uint64_t seed) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(lambda));
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), 1e-12) * std::exp(nd(rng));
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

namespace {

/// Basis-only EM on the rows the current window covers.
int refit_bases(const Eigen::MatrixXd& obs, const TimePoints& times, FactorModelParams& params,
                const Family& family, const ForecastConfig& config) {
  double prev = 0.0;
  for (int iter = 0; iter < config.max_iter; ++iter) {
    const EStepStats stats = posterior_pass(obs, times, params, family, config.regularization);
    if (iter > 0 && std::abs(stats.objective - prev) <= config.rel_tol * std::abs(prev)) return iter;
    prev = stats.objective;
    params.basis = update_basis(stats, times, params.weights, config.regularization);
  }
  return config.max_iter;
}

}  // namespace

ForecastResult forecast_factor(const Eigen::MatrixXd& obs, const TimePoints& times,
                               Eigen::Index n_train, const FactorModelParams& fitted,
                               const Family& family, const ForecastConfig& config) {
  check_observations(obs, times);
  if (n_train < 1 || n_train > obs.rows()) throw ConfigError("training length out of range");
  fitted.validate();
  ForecastResult res;
  res.final_params = fitted;
  FactorModelParams& p = res.final_params;
  const bool rolling = p.basis.size() > 1;
  double cum = 0.0;
  for (Eigen::Index n = n_train; n < obs.rows(); ++n) {
    ForecastStep step;
    step.t = times[n];
    step.score = log_density(obs.row(n).transpose(), step.t, p, family);
    cum += step.score;
    step.cumulative = cum;
    if (rolling && n + 1 < obs.rows()) {
      // Append a basis at the scored time and drop the oldest one.
      const Eigen::MatrixXd fresh = perturbed_basis(lambda_at(times[n - 1], p.basis, p.weights),
                                                    config.perturbation,
                                                    derive_seed(config.seed, "forecast-basis", n));
      const Eigen::Index d = p.basis.size();
      Eigen::VectorXd centers(d);
      centers.head(d - 1) = p.weights.centers.tail(d - 1);
      centers(d - 1) = step.t;
      p.weights = WeightScheme::shared(centers, p.weights.bandwidth(0));
      p.basis.lambdas.erase(p.basis.lambdas.begin());
      p.basis.lambdas.push_back(fresh);

      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i <= n; ++i) {
        if (times[i] >= centers(0)) rows.push_back(i);
      }
      step.iterations = refit_bases(take_rows(obs, rows), times.subset(rows), p, family, config);
    }
    res.steps.push_back(step);
  }
  return res;
}

Eigen::MatrixXd forecast_ewma(const Eigen::MatrixXd& obs, Eigen::Index n_train, Eigen::Index k,
                              const std::vector<double>& alphas) {
  if (n_train < 2 || n_train > obs.rows()) throw ConfigError("training length out of range");
  if (alphas.empty()) throw ConfigError("empty EWMA decay grid");
  Eigen::MatrixXd out(obs.rows() - n_train, static_cast<Eigen::Index>(alphas.size()));
  for (Eigen::Index n = n_train; n < obs.rows(); ++n) {
    EwmaModel m = ewma_fit(obs.topRows(n), k, 1.0);
    const Eigen::VectorXd y = obs.row(n).transpose();
    for (size_t a = 0; a < alphas.size(); ++a) {
      m.alpha = alphas[a];
      out(n - n_train, static_cast<Eigen::Index>(a)) = m.log_density(y, static_cast<double>(n + 1));
    }
  }
  return out;
}

}  // namespace tvfactor::app
