#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "mstep_checks.hpp"
#include "oracles.hpp"
#include "tvfactor/em_gaussian.hpp"
#include "tvfactor/em_spatiotemporal.hpp"
#include "tvfactor/errors.hpp"

using namespace tvfactor;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Panel random_panel(Eigen::Index n, Eigen::Index q, Eigen::Index p, std::mt19937_64& rng) {
  Panel out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(oracle::random_normal(q, p, rng));
  return out;
}

SpatioTemporalParams single_location(const FactorModelParams& g) {
  SpatioTemporalParams s;
  s.variant = StVariant::kA;
  s.B = g.B;
  s.C = MatrixXd::Ones(1, 1);
  s.sigma = g.sigma;
  s.phi = VectorXd::Ones(1);
  s.L = g.basis;
  s.omega = g.weights;
  s.G.lambdas = {MatrixXd::Ones(1, 1)};
  s.rho = WeightScheme::single();
  return s;
}

}  // namespace

TEST(StEStep, SingleLocationReducesToFactorModel) {
  std::mt19937_64 rng(1);
  const TimePoints times = TimePoints::range(12);
  FactorModelParams g;
  g.B = oracle::random_normal(4, 2, rng);
  g.sigma = VectorXd::LinSpaced(4, 0.4, 1.1);
  g.basis.lambdas = {oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
  g.weights = WeightScheme::shared((VectorXd(2) << 2, 10).finished(), 5.0);
  const Panel panel = random_panel(12, 4, 1, rng);
  MatrixXd flat(12, 4);
  for (Eigen::Index n = 0; n < 12; ++n) flat.row(n) = panel[static_cast<size_t>(n)].col(0).transpose();
  const EStepStats ref = e_step(flat, times, g);
  const STEStepStats got = e_step_st(panel, times, single_location(g));
  for (Eigen::Index n = 0; n < 12; ++n) {
    EXPECT_LT((got.eta[static_cast<size_t>(n)].col(0) - ref.eta.row(n).transpose()).norm(), 1e-12);
    EXPECT_LT((got.psi[static_cast<size_t>(n)] - ref.psi[static_cast<size_t>(n)]).norm(), 1e-12);
  }
  EXPECT_NEAR(st_log_joint_posterior(panel, times, single_location(g)), log_joint_posterior(flat, times, g), 1e-9);
}

TEST(StEStep, ZeroLoadingsGivePrior) {
  std::mt19937_64 rng(2);
  const TimePoints times = TimePoints::range(3);
  const WeightScheme w = WeightScheme::single();
  SpatioTemporalParams p = st_initial_params(StVariant::kB, 3, 2, 2, 1, w, w, 4);
  p.B.setZero();
  p.C.setZero();
  p.L.lambdas = {oracle::random_spd(2, rng)};
  p.G.lambdas = {MatrixXd::Constant(1, 1, 1.5)};
  const STEStepStats s = e_step_st(random_panel(3, 3, 2, rng), times, p);
  for (Eigen::Index n = 0; n < 3; ++n) {
    EXPECT_LT(s.eta[static_cast<size_t>(n)].norm(), 1e-15);
    EXPECT_LT((s.psi[static_cast<size_t>(n)] - 1.5 * p.L.lambdas[0]).norm(), 1e-12);
  }
}

TEST(StEStep, ScalarCase) {
  const WeightScheme w = WeightScheme::single();
  SpatioTemporalParams p = st_initial_params(StVariant::kA, 1, 1, 1, 1, w, w, 4);
  const double b = 0.7, c = 1.3, lam = 2.0, sigma = 0.5, phi = 0.8, y = 1.1;
  p.B(0, 0) = b;
  p.C(0, 0) = c;
  p.sigma(0) = sigma;
  p.phi(0) = phi;
  p.L.lambdas = {MatrixXd::Constant(1, 1, lam)};
  const STEStepStats s = e_step_st({MatrixXd::Constant(1, 1, y)}, TimePoints::range(1), p);
  const double noise = sigma * phi;
  const double psi = 1.0 / (1.0 / lam + c * c * b * b / noise);
  EXPECT_NEAR(s.psi[0](0, 0), psi, 1e-14);
  EXPECT_NEAR(s.eta[0](0, 0), psi * c * b * y / noise, 1e-14);
}

TEST(StUpdates, PhiSymmetricUnderLocationSwap) {
  std::mt19937_64 rng(3);
  const TimePoints times = TimePoints::range(10);
  const WeightScheme w = WeightScheme::single();
  SpatioTemporalParams p = st_initial_params(StVariant::kA, 3, 2, 2, 1, w, w, 5);
  p.C = MatrixXd::Ones(2, 1);
  p.phi = VectorXd::Ones(2);
  Panel panel;
  for (Eigen::Index n = 0; n < 10; ++n) {
    const VectorXd col = oracle::random_normal(3, 1, rng);
    panel.push_back((MatrixXd(3, 2) << col, col).finished());
  }
  const STEStepStats s = e_step_st(panel, times, p);
  const VectorXd phi = st_update_phi(panel, s, p);
  EXPECT_NEAR(phi(0), phi(1), 1e-12 * phi(0));
}

TEST(StUpdates, ClosedFormsMatchNumericalMaximizers) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& [name, dev] : oracle::check_spatiotemporal_updates(seed)) {
      EXPECT_LE(dev, 1e-5) << name << " seed " << seed;
    }
  }
}

TEST(StCovariance, KroneckerAssembly) {
  std::mt19937_64 rng(4);
  const WeightScheme omega = WeightScheme::shared((VectorXd(2) << 0, 5).finished(), 3.0);
  const WeightScheme rho = WeightScheme::shared((VectorXd(2) << 1, 4).finished(), 2.0);
  SpatioTemporalParams p = st_initial_params(StVariant::kB, 3, 2, 2, 2, omega, rho, 6);
  p.B = oracle::random_normal(3, 2, rng);
  p.C = oracle::random_normal(2, 2, rng);
  p.sigma = VectorXd::LinSpaced(3, 0.5, 1.0);
  p.phi = VectorXd::LinSpaced(2, 0.7, 1.4);
  p.L.lambdas = {oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
  p.G.lambdas = {oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
  const double t = 2.3;
  const MatrixXd lam = oracle::harmonic(oracle::weights(t, omega.centers, 3.0), p.L.lambdas);
  const MatrixXd gam = oracle::harmonic(oracle::weights(t, rho.centers, 2.0), p.G.lambdas);
  const MatrixXd ref = oracle::kron(p.C * gam * p.C.transpose(), p.B * lam * p.B.transpose()) +
                       oracle::kron(p.phi.asDiagonal().toDenseMatrix(), p.sigma.asDiagonal().toDenseMatrix());
  EXPECT_LT(oracle::rel_diff(st_marginal_covariance(t, p), ref), 1e-12);
}

TEST(StFit, TraceIsMonotone) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(seed + 10);
    const TimePoints times = TimePoints::range(15);
    const Panel panel = random_panel(15, 4, 3, rng);
    const WeightScheme w = WeightScheme::shared(VectorXd::LinSpaced(3, 1, 15), 6.0);
    for (StVariant v : {StVariant::kA, StVariant::kB}) {
      StFitConfig cfg;
      cfg.max_iter = 60;
      const StFitResult r = fit_st(panel, times, st_initial_params(v, 4, 3, 2, 2, w, w, seed), cfg);
      for (size_t i = 1; i < r.report.trace.size(); ++i) {
        EXPECT_GE(r.report.trace[i], r.report.trace[i - 1] - 1e-8 * std::abs(r.report.trace[i - 1]));
      }
    }
  }
}

TEST(StFit, SingleLocationEqualsFactorFit) {
  std::mt19937_64 rng(5);
  const TimePoints times = TimePoints::range(20);
  const Panel panel = random_panel(20, 5, 1, rng);
  MatrixXd flat(20, 5);
  for (Eigen::Index n = 0; n < 20; ++n) flat.row(n) = panel[static_cast<size_t>(n)].col(0).transpose();
  const WeightScheme w = WeightScheme::shared(VectorXd::LinSpaced(4, 1, 20), 6.0);
  const FactorModelParams init = initial_params(5, 2, w, 3);
  FitConfig fc;
  fc.max_iter = 30;
  fc.rel_tol = 1e-300;
  const FitResult g = fit(flat, times, w, fc, 2, init);
  StFitConfig sc;
  sc.max_iter = 30;
  sc.rel_tol = 1e-300;
  sc.freeze_spatial = true;
  sc.normalize_phi = false;
  const StFitResult s = fit_st(panel, times, single_location(init), sc);
  EXPECT_LT(oracle::rel_diff(s.params.B, g.params.B, 1e-6), 1e-8);
  EXPECT_LT(oracle::rel_diff(s.params.sigma, g.params.sigma, 1e-6), 1e-8);
}

TEST(StFit, RejectsMismatchedPanel) {
  std::mt19937_64 rng(6);
  Panel panel = random_panel(4, 3, 2, rng);
  panel[2] = MatrixXd::Zero(3, 1);
  EXPECT_THROW(check_panel(panel, TimePoints::range(4)), DataError);
}
