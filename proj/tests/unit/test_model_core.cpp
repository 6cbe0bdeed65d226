#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "tvfactor/errors.hpp"
#include "tvfactor/model_core.hpp"

using namespace tvfactor;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

FactorModelParams scalar_model(double b, double lambda, double sigma) {
  FactorModelParams p;
  p.B = MatrixXd::Constant(1, 1, b);
  p.sigma = VectorXd::Constant(1, sigma);
  p.basis.lambdas = {MatrixXd::Constant(1, 1, lambda)};
  p.weights = WeightScheme::single();
  return p;
}

}  // namespace

TEST(Weights, SingleBasisIsOne) {
  const WeightScheme s = WeightScheme::shared(vec({3.0}), 0.1);
  for (double t : {-100.0, 0.0, 3.0, 1e3}) EXPECT_DOUBLE_EQ(eval_weights(t, s)(0), 1.0);
}

TEST(Weights, MidpointIsSymmetric) {
  const VectorXd w = eval_weights(5.0, WeightScheme::shared(vec({0.0, 10.0}), 4.0));
  EXPECT_DOUBLE_EQ(w(0), 0.5);
  EXPECT_DOUBLE_EQ(w(1), 0.5);
}

TEST(Weights, TwoCentersAtOrigin) {
  const VectorXd w = eval_weights(0.0, WeightScheme::shared(vec({0.0, 10.0}), 10.0));
  const double e = std::exp(-1.0);
  EXPECT_NEAR(w(0), 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(w(1), e / (1.0 + e), 1e-15);
  EXPECT_NEAR(w(0), 0.7311, 1e-4);
  EXPECT_NEAR(w(1), 0.2689, 1e-4);
}

TEST(Weights, FarFromEveryCenterIsDegenerate) {
  EXPECT_THROW(eval_weights(1e6, WeightScheme::shared(vec({0.0, 10.0}), 1.0)), DegenerateWeightsError);
  // Still representable: exp(-20^2) is about 1e-174.
  const VectorXd w = eval_weights(30.0, WeightScheme::shared(vec({0.0, 10.0}), 1.0));
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w(1), 1.0, 1e-12);
}

TEST(Weights, MatchesLongDoubleOracle) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const VectorXd centers = oracle::random_normal(5, 1, rng, 3.0);
    const double h = oracle::uniform(rng, 0.5, 4.0);
    const double t = oracle::uniform(rng, -5, 5);
    const VectorXd got = eval_weights(t, WeightScheme::shared(centers, h));
    EXPECT_LT((got - oracle::weights(t, centers, h)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(got.sum(), 1.0, 1e-14);
  }
}

TEST(Weights, RejectsBadSchemes) {
  EXPECT_THROW(WeightScheme::shared(vec({0.0}), 0.0).validate(), ConfigError);
  EXPECT_THROW(WeightScheme::shared(VectorXd(), 1.0).validate(), ConfigError);
}

TEST(LambdaAt, SingleBasisIsConstant) {
  BasisSet b;
  b.lambdas = {(MatrixXd(2, 2) << 2, 0.3, 0.3, 1).finished()};
  const WeightScheme s = WeightScheme::shared(vec({1.0}), 2.0);
  for (double t : {-4.0, 0.0, 7.5}) EXPECT_LT((lambda_at(t, b, s) - b.lambdas[0]).norm(), 1e-14);
}

TEST(LambdaAt, IdenticalBasesGiveThatBasis) {
  const MatrixXd l0 = (MatrixXd(2, 2) << 1.5, -0.2, -0.2, 0.7).finished();
  BasisSet b;
  b.lambdas = {l0, l0, l0};
  const WeightScheme s = WeightScheme::shared(vec({0, 1, 2}), 0.8);
  EXPECT_LT((lambda_at(0.4, b, s) - l0).norm(), 1e-14);
}

TEST(LambdaAt, HarmonicMeanOfDiagonals) {
  BasisSet b;
  b.lambdas = {vec({1, 2}).asDiagonal(), vec({3, 6}).asDiagonal()};
  const MatrixXd l = lambda_at(5.0, b, WeightScheme::shared(vec({0, 10}), 3.0));
  EXPECT_NEAR(l(0, 0), 1.5, 1e-14);
  EXPECT_NEAR(l(1, 1), 3.0, 1e-14);
  EXPECT_NEAR(l(0, 1), 0.0, 1e-14);
}

TEST(SigmaAt, ScalarHarmonicMean) {
  FactorModelParams p = scalar_model(1.0, 1.0, 1.0);
  TimeVaryingSigma tv;
  tv.schemes = {WeightScheme::shared(vec({0, 10}), 3.0)};
  tv.nu = {vec({1, 3})};
  p.tv_sigma = tv;
  EXPECT_NEAR(sigma_at(5.0, p, 0), 1.5, 1e-14);
  tv.nu = {vec({2.5, 2.5})};
  p.tv_sigma = tv;
  EXPECT_NEAR(sigma_at(1.7, p, 0), 2.5, 1e-14);
}

TEST(SigmaAt, ConstantWithoutBases) {
  const FactorModelParams p = scalar_model(1.0, 1.0, 0.7);
  EXPECT_DOUBLE_EQ(sigma_at(-3.0, p, 0), 0.7);
}

TEST(MarginalCovariance, HandProduct) {
  FactorModelParams p;
  p.B = MatrixXd::Ones(2, 1);
  p.sigma = VectorXd::Ones(2);
  p.basis.lambdas = {MatrixXd::Constant(1, 1, 2.0)};
  p.weights = WeightScheme::single();
  const MatrixXd s = marginal_covariance(0.0, p);
  EXPECT_LT((s - (MatrixXd(2, 2) << 3, 2, 2, 3).finished()).norm(), 1e-15);
  p.B.setZero();
  EXPECT_LT((marginal_covariance(0.0, p) - MatrixXd::Identity(2, 2)).norm(), 1e-15);
}

TEST(MarginalCovariance, IdentityLoadingsSmallNoise) {
  FactorModelParams p;
  p.B = MatrixXd::Identity(2, 2);
  p.sigma = VectorXd::Constant(2, 1e-9);
  const MatrixXd l = (MatrixXd(2, 2) << 2, 0.5, 0.5, 1).finished();
  p.basis.lambdas = {l};
  p.weights = WeightScheme::single();
  EXPECT_LT((marginal_covariance(0.0, p) - l - 1e-9 * MatrixXd::Identity(2, 2)).norm(), 1e-15);
}

TEST(LogDensity, StandardNormalAtZero) {
  const FactorModelParams p = scalar_model(0.0, 1.0, 1.0);
  EXPECT_NEAR(log_density(VectorXd::Zero(1), 0.0, p), -0.5 * std::log(2 * std::numbers::pi), 1e-15);
}

TEST(LogDensity, ScalarNormal) {
  const FactorModelParams p = scalar_model(0.8, 1.7, 0.4);
  const double var = 0.8 * 0.8 * 1.7 + 0.4;
  const double y = 1.3;
  const double ref = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * y * y / var;
  EXPECT_NEAR(log_density(VectorXd::Constant(1, y), 0.0, p), ref, 1e-14);
}

TEST(LogDensity, MatchesDenseOracle) {
  std::mt19937_64 rng(5);
  FactorModelParams p;
  p.B = oracle::random_normal(6, 2, rng);
  p.sigma = oracle::random_normal(6, 1, rng).cwiseAbs().array() + 0.2;
  p.basis.lambdas = {oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
  p.weights = WeightScheme::shared(vec({0, 4}), 3.0);
  const VectorXd y = oracle::random_normal(6, 1, rng);
  const MatrixXd s = marginal_covariance(1.3, p);
  EXPECT_NEAR(log_density(y, 1.3, p), oracle::gaussian_logpdf(y, s), 1e-11);
  EXPECT_NEAR(log_density(y, 1.3, p, Family::student_t(4.5)), oracle::student_logpdf(y, s, 4.5), 1e-11);
}

TEST(LogDensity, LargeNuApproachesGaussian) {
  std::mt19937_64 rng(8);
  FactorModelParams p;
  p.B = oracle::random_normal(5, 2, rng);
  p.sigma = VectorXd::Constant(5, 0.5);
  p.basis.lambdas = {oracle::random_spd(2, rng)};
  p.weights = WeightScheme::single();
  const VectorXd y = oracle::random_normal(5, 1, rng);
  EXPECT_NEAR(log_density(y, 0.0, p, Family::student_t(1e8)), log_density(y, 0.0, p), 1e-4);
}

TEST(Prior, ZeroForOneBasisOrIdenticalBases) {
  std::mt19937_64 rng(2);
  const TimePoints times = TimePoints::range(12);
  BasisSet one;
  one.lambdas = {oracle::random_spd(3, rng)};
  EXPECT_NEAR(log_prior_basis(one, WeightScheme::shared(vec({4}), 2.0), times), 0.0, 1e-12);
  BasisSet same;
  same.lambdas = {one.lambdas[0], one.lambdas[0], one.lambdas[0]};
  EXPECT_NEAR(log_prior_basis(same, WeightScheme::shared(vec({1, 5, 9}), 3.0), times), 0.0, 1e-10);
}

TEST(Prior, NegativeForDistinctBases) {
  std::mt19937_64 rng(3);
  const TimePoints times = TimePoints::range(10);
  BasisSet b;
  b.lambdas = {oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
  const WeightScheme s = WeightScheme::shared(vec({2, 8}), 6.0);
  const double got = log_prior_basis(b, s, times);
  EXPECT_LT(got, 0.0);
  EXPECT_NEAR(got, oracle::basis_prior(oracle::weight_matrix(times.values(), vec({2, 8}), 6.0), b.lambdas), 1e-10);
}

TEST(Regularization, DefaultsAndScalarTheta) {
  RegularizationConfig r;
  r.mode = RegularizationConfig::Mode::kInverseWishart;
  EXPECT_NEAR(r.prior_count(3), 1e-8, 1e-20);
  EXPECT_LT((r.theta_matrix(2) - 1e-8 * MatrixXd::Identity(2, 2)).norm(), 1e-22);
  r.theta = MatrixXd::Constant(1, 1, 0.25);
  EXPECT_LT((r.theta_matrix(3) - 0.25 * MatrixXd::Identity(3, 3)).norm(), 1e-16);
  r.zeta = 2.0;
  EXPECT_DOUBLE_EQ(r.prior_count(3), 6.0);
}

TEST(TimePointsTest, RejectsUnsortedAndNonFinite) {
  EXPECT_THROW(TimePoints(vec({1, 1})), DataError);
  EXPECT_THROW(TimePoints(vec({2, 1})), DataError);
  EXPECT_THROW(TimePoints(vec({0, std::nan("")})), DataError);
  EXPECT_NO_THROW(TimePoints(vec({0.5})));
}

TEST(FactorPosteriorTest, WoodburyMatchesDense) {
  std::mt19937_64 rng(4);
  const MatrixXd b = oracle::random_normal(7, 3, rng);
  const VectorXd sigma = oracle::random_normal(7, 1, rng).cwiseAbs().array() + 0.1;
  const MatrixXd lam = oracle::random_spd(3, rng);
  const VectorXd y = oracle::random_normal(7, 1, rng);
  const FactorPosterior fp = factor_posterior(y, lam.inverse(), b, sigma);
  MatrixXd s = b * lam * b.transpose();
  s.diagonal() += sigma;
  EXPECT_NEAR(fp.quad, y.dot(s.ldlt().solve(y)), 1e-10);
  EXPECT_NEAR(fp.log_det, std::log(s.determinant()), 1e-10);
  const MatrixXd gain = lam * b.transpose() * s.inverse();
  EXPECT_LT((fp.eta - gain * y).norm(), 1e-10);
  EXPECT_LT((fp.psi - (lam - gain * b * lam)).norm(), 1e-10);
}
