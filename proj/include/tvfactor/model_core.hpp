#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace tvfactor {

/// Ordered observation times (strictly increasing, finite, N >= 1).
class TimePoints {
 public:
  TimePoints() = default;
  explicit TimePoints(Eigen::VectorXd t);
  static TimePoints range(Eigen::Index n);  // 1, 2, ..., n

  const Eigen::VectorXd& values() const { return t_; }
  Eigen::Index size() const { return t_.size(); }
  double operator[](Eigen::Index i) const { return t_(i); }
  double min_gap() const;
  double span() const { return t_(t_.size() - 1) - t_(0); }
  TimePoints subset(const std::vector<Eigen::Index>& idx) const;

 private:
  Eigen::VectorXd t_;
};

/// Rows of a subset of an N x Q observation matrix.
Eigen::MatrixXd take_rows(const Eigen::MatrixXd& y, const std::vector<Eigen::Index>& idx);

/// Throws DataError unless rows match the time count and all entries are finite.
void check_observations(const Eigen::MatrixXd& obs, const TimePoints& times);

/**
 * @brief Kernel weights over D basis centers.
 *
 * omega_d(t) is proportional to exp(-(t - s_d)^2 / h_d^2). A single bandwidth
 * entry is shared by every center.
 */
struct WeightScheme {
  enum class Kernel { kSquaredExponential };

  Kernel kernel = Kernel::kSquaredExponential;
  Eigen::VectorXd centers;
  Eigen::VectorXd bandwidths;

  static WeightScheme shared(Eigen::VectorXd centers, double h0);
  /// One basis (homoscedastic model).
  static WeightScheme single();

  Eigen::Index size() const { return centers.size(); }
  double bandwidth(Eigen::Index d) const {
    return bandwidths.size() == 1 ? bandwidths(0) : bandwidths(d);
  }
  WeightScheme with_bandwidth(double h0) const { return shared(centers, h0); }
  void validate() const;
};

Eigen::VectorXd eval_weights(double t, const WeightScheme& scheme);

/// N x D matrix with row n = eval_weights(t_n).
Eigen::MatrixXd weight_matrix(const Eigen::VectorXd& times, const WeightScheme& scheme);

struct BasisSet {
  std::vector<Eigen::MatrixXd> lambdas;

  Eigen::Index size() const { return static_cast<Eigen::Index>(lambdas.size()); }
  Eigen::Index dim() const { return lambdas.empty() ? 0 : lambdas.front().rows(); }
  static BasisSet identity(Eigen::Index d, Eigen::Index k);
};

/// Inverses and inverse log-determinants of every basis matrix.
struct BasisInverses {
  std::vector<Eigen::MatrixXd> inv;
  Eigen::VectorXd log_det_inv;
  Eigen::MatrixXd flat;  // D x K^2, row d = vec(lambda_d^{-1})
};

BasisInverses invert_basis(const BasisSet& basis);

/// Row n of the result is vec(sum_d W(n,d) inv_d) (weighted precision at t_n).
Eigen::MatrixXd accumulate_precisions(const Eigen::MatrixXd& w, const BasisInverses& inv);

/// Reshape one row of accumulate_precisions into a symmetric K x K matrix.
Eigen::MatrixXd unflatten(const Eigen::MatrixXd& flat, Eigen::Index row, Eigen::Index k);

/// Lambda_t^{-1} = sum_d omega_d(t) lambda_d^{-1}.
Eigen::MatrixXd precision_at(double t, const BasisSet& basis, const WeightScheme& scheme);
Eigen::MatrixXd lambda_at(double t, const BasisSet& basis, const WeightScheme& scheme);

/// Per-coordinate scalar bases for a time-varying idiosyncratic variance.
struct TimeVaryingSigma {
  std::vector<WeightScheme> schemes;  // one shared scheme, or one per coordinate
  std::vector<Eigen::VectorXd> nu;    // nu[q](d) > 0

  const WeightScheme& scheme(Eigen::Index q) const {
    return schemes.size() == 1 ? schemes.front() : schemes[static_cast<size_t>(q)];
  }
  Eigen::Index coords() const { return static_cast<Eigen::Index>(nu.size()); }
};

struct FactorModelParams {
  Eigen::MatrixXd B;
  Eigen::VectorXd sigma;
  std::optional<TimeVaryingSigma> tv_sigma;
  BasisSet basis;
  WeightScheme weights;

  Eigen::Index Q() const { return B.rows(); }
  Eigen::Index K() const { return B.cols(); }
  /// Idiosyncratic variances at t (constant unless tv_sigma is set).
  Eigen::VectorXd sigma_vector_at(double t) const;
  void validate() const;
};

double sigma_at(double t, const FactorModelParams& params, Eigen::Index q);

Eigen::MatrixXd marginal_covariance(double t, const FactorModelParams& params);

struct Family {
  enum class Kind { kGaussian, kStudentT };
  Kind kind = Kind::kGaussian;
  double nu = 0.0;

  static Family gaussian() { return {}; }
  static Family student_t(double nu) { return {Kind::kStudentT, nu}; }
  bool robust() const { return kind == Kind::kStudentT; }
};

/// Log-density of a zero-mean law with covariance S given q = y'S^{-1}y and log|S|.
double family_log_density(double quad, double log_det, Eigen::Index dim, const Family& family);

/// lgamma(a + b) - lgamma(a), accurate for very large a.
double lgamma_difference(double a, double b);

double log_density(const Eigen::VectorXd& y, double t, const FactorModelParams& params,
                   const Family& family = Family::gaussian());

/**
 * @brief Posterior of one factor vector given y, with the marginal quantities
 * computed through the Woodbury identity (no Q x Q factorization).
 */
struct FactorPosterior {
  Eigen::VectorXd eta;
  Eigen::MatrixXd psi;
  double quad = 0.0;     // y'(B Lambda B' + Sigma)^{-1} y
  double log_det = 0.0;  // log|B Lambda B' + Sigma|
};

FactorPosterior factor_posterior(const Eigen::VectorXd& y, const Eigen::MatrixXd& lambda_prec,
                                 const Eigen::MatrixXd& B, const Eigen::VectorXd& sigma);

/**
 * @brief Improper basis prior.
 *
 * scale * (1/2 sum_n sum_d w log|lambda_d^{-1}| - 1/2 sum_n log|sum_d w lambda_d^{-1}|).
 */
double log_prior_basis(const BasisSet& basis, const WeightScheme& scheme, const TimePoints& times,
                       double scale = 1.0);

/// Same prior evaluated from a precomputed weight matrix and inverses.
double log_prior_basis(const BasisInverses& inv, const Eigen::MatrixXd& w);

/// Scalar version for per-coordinate variance bases.
double log_prior_scalar(const Eigen::VectorXd& nu, const WeightScheme& scheme,
                        const TimePoints& times);

struct RegularizationConfig {
  enum class Mode { kFree, kDiagonal, kInverseWishart };
  Mode mode = Mode::kFree;
  std::optional<double> zeta;  // unset: zeta + K + 1 = 1e-8
  Eigen::MatrixXd theta;       // empty: 1e-8 * I; 1 x 1: that multiple of I

  double prior_count(Eigen::Index k) const;
  Eigen::MatrixXd theta_matrix(Eigen::Index k) const;
};

/// Inverse-Wishart log-density (up to constants) summed over the basis.
double log_prior_inverse_wishart(const BasisInverses& inv, const RegularizationConfig& reg,
                                 Eigen::Index k);

}  // namespace tvfactor
