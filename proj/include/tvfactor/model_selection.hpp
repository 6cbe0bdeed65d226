#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvfactor/em_gaussian.hpp"
#include "tvfactor/model_core.hpp"
#include "tvfactor/random.hpp"

namespace tvfactor {

struct SplitPlan {
  enum class Mode { kRandom, kBlockwise };
  Mode mode = Mode::kRandom;
  double ratio = 0.1;  // validation fraction
  int count = 12;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> validation;
};

/// Deterministic in (n, plan). Blockwise splits hold out one contiguous block each,
/// with offsets spread evenly over the series.
std::vector<Split> make_splits(Eigen::Index n, const SplitPlan& plan);

/// `count` log-spaced bandwidths from the smallest time gap to the full span.
std::vector<double> default_bandwidth_grid(const TimePoints& times, int count = 16);

/**
 * @brief Leave-one-out basis downdates.
 *
 * Pooled bases lambda~_d = sum_n w_dn b_n b_n' / W_d are inverted once; removing
 * point n is a rank-one Sherman-Morrison downdate of each inverse.
 */
class LooDowndater {
 public:
  /// w: N x D weights of the candidate scheme at the observed times; b: N x K draws.
  LooDowndater(Eigen::MatrixXd w, Eigen::MatrixXd b);

  Eigen::Index points() const { return w_.rows(); }
  Eigen::Index bases() const { return w_.cols(); }
  const Eigen::MatrixXd& pooled(Eigen::Index d) const { return pooled_[static_cast<size_t>(d)]; }
  bool pooled_ok(Eigen::Index d) const { return ok_[static_cast<size_t>(d)]; }

  /// lambda~_{d,n} formed directly.
  Eigen::MatrixXd downdated(Eigen::Index d, Eigen::Index n) const;
  /// Inverse of lambda~_{d,n} by Sherman-Morrison; nullopt if it is not PD.
  std::optional<Eigen::MatrixXd> downdated_inverse(Eigen::Index d, Eigen::Index n) const;
  /// sum_d w_dn lambda~_{d,n}^{-1}; nullopt if any contributing downdate fails.
  std::optional<Eigen::MatrixXd> loo_precision(Eigen::Index n) const;
  /// All loo_precision values, computed in bulk.
  std::vector<std::optional<Eigen::MatrixXd>> all_loo_precisions() const;

 private:
  Eigen::MatrixXd w_;
  Eigen::MatrixXd b_;
  Eigen::VectorXd totals_;
  std::vector<Eigen::MatrixXd> pooled_;
  std::vector<Eigen::MatrixXd> inv_;
  std::vector<bool> ok_;
};

LooDowndater loo_basis_downdate(const TimePoints& times, const WeightScheme& scheme,
                                const Eigen::MatrixXd& sampled_b);

/// One draw b_n ~ N(sqrt(xi2_n) eta_n, psi_n) per point, or the mean when deterministic.
Eigen::MatrixXd sample_factors(const EStepStats& stats, std::uint64_t seed, bool deterministic);

struct BandwidthScore {
  double h0 = 0.0;
  double value = 0.0;
  int skipped = 0;
};

/// True if a ranks above b: fewer skipped points, then larger value, then smaller h0.
bool better_score(const BandwidthScore& a, const BandwidthScore& b);

BandwidthScore bandwidth_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                                   const FactorModelParams& params, const EStepStats& stats,
                                   double h0, const Eigen::MatrixXd& sampled_b,
                                   const Family& family = Family::gaussian());

/// Runs its own E-step at params.
BandwidthScore bandwidth_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                                   const FactorModelParams& params, double h0,
                                   std::uint64_t seed = 0, bool deterministic = false,
                                   const Family& family = Family::gaussian());

struct BandwidthConfig {
  std::vector<double> grid;  // empty: default_bandwidth_grid
  bool dynamic = true;
  bool deterministic = false;
  int start_iter = 3;     // first iteration with re-selection
  int stable_rounds = 3;  // freeze after this many identical consecutive choices
  int max_rounds = 30;
  std::uint64_t seed = 0;
};

struct AdaptiveFit {
  FactorModelParams params;
  FitReport report;
  EStepStats stats;
  double h0 = 0.0;
};

/// EM with bandwidth selection; centers default to the observed times.
AdaptiveFit fit_adaptive(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                         const Family& family, const FitConfig& config,
                         const BandwidthConfig& bw,
                         const std::optional<Eigen::VectorXd>& centers = std::nullopt);

/// Static mode fits once per candidate; dynamic mode re-selects inside one fit.
double select_bandwidth(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                        const std::vector<double>& grid, bool dynamic, const FitConfig& config,
                        const Family& family = Family::gaussian(), std::uint64_t seed = 0);

double validation_score(const Eigen::MatrixXd& held_out, const Eigen::VectorXd& held_out_times,
                        const FactorModelParams& params, const Family& family = Family::gaussian());

/// Per-point validation log-densities.
Eigen::VectorXd validation_terms(const Eigen::MatrixXd& held_out, const Eigen::VectorXd& times,
                                 const FactorModelParams& params, const Family& family);

struct SplitScore {
  Eigen::Index k = 0;
  int split = 0;
  bool ok = false;
  double score = 0.0;
  double h0 = 0.0;
  std::string error;
};

struct SelectionConfig {
  FitConfig fit;
  BandwidthConfig bandwidth;
  Family family;
  bool heteroscedastic = true;  // false: one basis (homoscedastic)
  bool refit = true;
  /// Called after each successful split fit.
  std::function<void(Eigen::Index k, int split, const Split&, const FactorModelParams&)> on_fit;
};

struct SelectionResult {
  Eigen::Index k_hat = 0;
  double h_hat = 0.0;
  std::map<Eigen::Index, double> v_table;
  std::vector<SplitScore> split_scores;
  std::optional<AdaptiveFit> final_fit;
};

SelectionResult select_K(const Eigen::MatrixXd& obs, const TimePoints& times,
                         const std::vector<Eigen::Index>& candidates, const SplitPlan& plan,
                         const SelectionConfig& config);

/// One fit on a training subset with the same settings select_K uses.
AdaptiveFit fit_for_selection(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                              const SelectionConfig& config, std::uint64_t fit_seed,
                              std::uint64_t bw_seed);

}  // namespace tvfactor
