#include "tvfactor/em_robust.hpp"

#include "tvfactor/errors.hpp"

namespace tvfactor {

namespace {

void check_nu(double nu) {
  if (!(nu > 0.0)) throw ConfigError("degrees of freedom must be positive");
}

}  // namespace

RobustEStepStats e_step_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                               const FactorModelParams& params, double nu) {
  check_nu(nu);
  return posterior_pass(obs, times, params, Family::student_t(nu));
}

FactorModelParams m_step_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                                const RobustEStepStats& stats, const WeightScheme& scheme,
                                const RegularizationConfig& reg) {
  if (stats.xi2.size() != stats.size()) throw ConfigError("robust M-step needs xi2 weights");
  return m_step(obs, times, stats, scheme, reg);
}

RobustFitResult fit_robust(const Eigen::MatrixXd& obs, const TimePoints& times,
                           const WeightScheme& scheme, const FitConfig& config, double nu,
                           Eigen::Index k, const std::optional<FactorModelParams>& init) {
  check_nu(nu);
  FitResult r = fit_family(obs, times, scheme, config, Family::student_t(nu), init, {}, k);
  RobustFitResult out;
  out.params = std::move(r.params);
  out.report = std::move(r.report);
  out.extras.nu = nu;
  out.extras.xi2 = r.stats.xi2;
  out.stats = std::move(r.stats);
  return out;
}

double robust_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                        const FactorModelParams& params, double nu) {
  check_nu(nu);
  return posterior_pass(obs, times, params, Family::student_t(nu)).objective;
}

}  // namespace tvfactor
