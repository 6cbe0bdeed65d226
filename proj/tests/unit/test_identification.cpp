#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tvfactor/identification.hpp"

using namespace tvfactor;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

FactorModelParams random_model(Eigen::Index q, Eigen::Index k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FactorModelParams p;
  p.B = oracle::random_normal(q, k, rng);
  p.sigma = VectorXd::LinSpaced(q, 0.2, 1.0);
  p.basis.lambdas = {oracle::random_spd(k, rng), oracle::random_spd(k, rng), oracle::random_spd(k, rng)};
  p.weights = WeightScheme::shared((VectorXd(3) << 0, 5, 10).finished(), 4.0);
  return p;
}

double max_cov_change(const FactorModelParams& a, const FactorModelParams& b) {
  double worst = 0.0;
  for (double t : {0.0, 2.5, 7.1, 10.0}) {
    const MatrixXd ca = marginal_covariance(t, a);
    worst = std::max(worst, (ca - marginal_covariance(t, b)).norm() / ca.norm());
  }
  return worst;
}

}  // namespace

TEST(Cosine, HandCases) {
  MatrixXd b(4, 2);
  b << 1, 0, 1, 1, 0, 3, 2, 0;
  EXPECT_NEAR(cosine_similarity(b, 0, 3), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(b, 0, 2), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(b, 0, 1), 1.0 / std::sqrt(2.0), 1e-15);
  const MatrixXd s = similarity_matrix(b);
  EXPECT_NEAR(s(1, 0), s(0, 1), 1e-15);
  EXPECT_NEAR(s(2, 2), 1.0, 1e-15);
}

TEST(Loadings, IdentityAndScaledCovariance) {
  FactorModelParams p = random_model(5, 2, 1);
  p.basis.lambdas = {MatrixXd::Identity(2, 2)};
  p.weights = WeightScheme::single();
  EXPECT_LT((time_varying_loadings(p, 0.0) - p.B).norm(), 1e-14);
  p.basis.lambdas = {4.0 * MatrixXd::Identity(2, 2)};
  EXPECT_LT((time_varying_loadings(p, 0.0) - 2.0 * p.B).norm(), 1e-13);
}

TEST(Loadings, ReconstructCommonCovariance) {
  const FactorModelParams p = random_model(6, 3, 2);
  const MatrixXd l = time_varying_loadings(p, 3.3);
  const MatrixXd lam = lambda_at(3.3, p.basis, p.weights);
  EXPECT_LT(oracle::rel_diff(l * l.transpose(), p.B * lam * p.B.transpose()), 1e-12);
}

TEST(Orthonormalize, AlreadyOrthonormalKeepsColumns) {
  FactorModelParams p = random_model(5, 2, 3);
  p.B = Eigen::HouseholderQR<MatrixXd>(p.B).householderQ() * MatrixXd::Identity(5, 2);
  const FactorModelParams o = orthonormalize(p);
  // Each new column is plus or minus some old column.
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double best = (p.B.transpose() * o.B.col(j)).cwiseAbs().maxCoeff();
    EXPECT_NEAR(best, 1.0, 1e-12);
  }
}

TEST(Orthonormalize, OrthogonalColumnsOfUnequalNorm) {
  FactorModelParams p = random_model(3, 2, 4);
  p.B = MatrixXd::Zero(3, 2);
  p.B(0, 0) = 2.0;
  p.B(1, 1) = 1.0;
  const FactorModelParams o = orthonormalize(p);
  EXPECT_LT((o.B.transpose() * o.B - MatrixXd::Identity(2, 2)).norm(), 1e-14);
  // The column of norm 2 has its basis scaled by 4.
  const Eigen::Index big = std::abs(o.B(0, 0)) > 0.5 ? 0 : 1;
  for (size_t d = 0; d < p.basis.lambdas.size(); ++d) {
    EXPECT_NEAR(o.basis.lambdas[d](big, big), 4.0 * p.basis.lambdas[d](0, 0), 1e-12);
  }
}

TEST(Orthonormalize, PreservesCovariance) {
  const FactorModelParams p = random_model(7, 3, 5);
  EXPECT_LT(max_cov_change(p, orthonormalize(p)), 1e-10);
}

TEST(Sparsify, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const MatrixXd bt = oracle::random_normal(8, 3, rng);
  const MatrixXd a = MatrixXd::Identity(3, 3) + 0.2 * oracle::random_normal(3, 3, rng);
  const MatrixXd g = sparsify_gradient(bt, a, 2.5);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      MatrixXd ap = a, am = a;
      ap(i, j) += h;
      am(i, j) -= h;
      const double fd = (sparsify_objective(bt, ap, 2.5) - sparsify_objective(bt, am, 2.5)) / (2 * h);
      EXPECT_NEAR(g(i, j), fd, 1e-5);
    }
  }
}

TEST(Sparsify, SingleFactorHasUnitScale) {
  FactorModelParams p = random_model(6, 1, 7);
  const IdentifiedModel id = identify(p);
  EXPECT_NEAR(std::abs(id.rotation.A(0, 0)), 1.0, 1e-3);
  EXPECT_LT(max_cov_change(p, id.params), 1e-8);
}

TEST(Sparsify, RecoversRotatedSparseTarget) {
  // Sparse orthonormal target hidden by a rotation.
  MatrixXd target = MatrixXd::Zero(9, 3);
  for (Eigen::Index r = 0; r < 9; ++r) target(r, r / 3) = 1.0 / std::sqrt(3.0);
  const double th = 0.5;
  MatrixXd rot = MatrixXd::Identity(3, 3);
  rot(0, 0) = std::cos(th);
  rot(0, 1) = -std::sin(th);
  rot(1, 0) = std::sin(th);
  rot(1, 1) = std::cos(th);
  const MatrixXd bt = target * rot;
  BasisSet basis;
  basis.lambdas = {MatrixXd::Identity(3, 3)};
  const SparsifyResult r = sparsify(bt, basis);
  // |entries| of B A match the target up to column order and sign.
  for (Eigen::Index j = 0; j < 3; ++j) {
    double best = 0.0;
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double cosv = std::abs(r.B.col(j).dot(target.col(c))) / r.B.col(j).norm();
      best = std::max(best, cosv);
    }
    EXPECT_GT(best, 0.99);
  }
  EXPECT_NEAR(r.B.cwiseAbs().sum(), target.cwiseAbs().sum(), 0.05 * target.cwiseAbs().sum());
}

TEST(Identify, PreservesCovariance) {
  const FactorModelParams p = random_model(10, 3, 8);
  EXPECT_LT(max_cov_change(p, identify(p).params), 1e-8);
}
