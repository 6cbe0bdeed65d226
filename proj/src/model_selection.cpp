#include "tvfactor/model_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tvfactor/errors.hpp"
#include "tvfactor/linalg.hpp"

namespace tvfactor {

void SplitPlan::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  if (count < 1) throw ConfigError("split count must be at least 1");
}

std::vector<Split> make_splits(Eigen::Index n, const SplitPlan& plan) {
  plan.validate();
  if (n < 2) throw DataError("splitting needs at least two observations");
  Eigen::Index m = static_cast<Eigen::Index>(std::llround(plan.ratio * static_cast<double>(n)));
  m = std::clamp<Eigen::Index>(m, 1, n - 1);
  std::vector<Split> out;
  out.reserve(static_cast<size_t>(plan.count));
  for (int s = 0; s < plan.count; ++s) {
    std::vector<bool> held(static_cast<size_t>(n), false);
    if (plan.mode == SplitPlan::Mode::kRandom) {
      std::vector<Eigen::Index> idx(static_cast<size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(derive_seed(plan.seed, "split", static_cast<std::uint64_t>(s)));
      std::shuffle(idx.begin(), idx.end(), rng);
      for (Eigen::Index i = 0; i < m; ++i) held[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;
    } else {
      const Eigen::Index span = n - m;
      const Eigen::Index off =
          plan.count > 1 ? (static_cast<Eigen::Index>(s) * span) / (plan.count - 1) : 0;
      for (Eigen::Index i = off; i < off + m; ++i) held[static_cast<size_t>(i)] = true;
    }
    Split sp;
    for (Eigen::Index i = 0; i < n; ++i) {
      (held[static_cast<size_t>(i)] ? sp.validation : sp.train).push_back(i);
    }
    out.push_back(std::move(sp));
  }
  return out;
}

std::vector<double> default_bandwidth_grid(const TimePoints& times, int count) {
  if (count < 1) throw ConfigError("bandwidth grid needs at least one value");
  const double lo = times.min_gap();
  const double hi = std::max(times.span(), lo);
  std::vector<double> g(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    g[static_cast<size_t>(i)] = std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)));
  }
  return g;
}

LooDowndater::LooDowndater(Eigen::MatrixXd w, Eigen::MatrixXd b) : w_(std::move(w)), b_(std::move(b)) {
  if (w_.rows() != b_.rows()) throw ConfigError("weights and draws differ in point count");
  if (w_.rows() < 2) throw DataError("leave-one-out needs at least two points");
  const Eigen::Index k = b_.cols();
  totals_ = w_.colwise().sum().transpose();
  const Eigen::MatrixXd num = [&] {
    Eigen::MatrixXd flat(b_.rows(), k * k);
    for (Eigen::Index n = 0; n < b_.rows(); ++n) {
      const Eigen::MatrixXd bb = b_.row(n).transpose() * b_.row(n);
      flat.row(n) = Eigen::Map<const Eigen::RowVectorXd>(bb.data(), k * k);
    }
    return Eigen::MatrixXd(w_.transpose() * flat);
  }();
  for (Eigen::Index d = 0; d < w_.cols(); ++d) {
    Eigen::MatrixXd p = unflatten(num, d, k);
    bool ok = totals_(d) > 0.0;
    if (ok) p /= totals_(d);
    pooled_.push_back(p);
    SpdFactor f;
    ok = ok && f.try_compute(p);
    ok_.push_back(ok);
    inv_.push_back(ok ? f.inverse() : Eigen::MatrixXd::Zero(k, k));
  }
}

Eigen::MatrixXd LooDowndater::downdated(Eigen::Index d, Eigen::Index n) const {
  const double wt = totals_(d);
  const double wn = w_(n, d);
  const Eigen::VectorXd b = b_.row(n).transpose();
  return (wt / (wt - wn)) * pooled(d) - (wn / (wt - wn)) * b * b.transpose();
}

namespace {

constexpr double kDowndateEps = 1e-12;

/// Scale a = W/(W - w) and the Sherman-Morrison pieces for point n in basis d.
struct Downdate {
  bool ok = false;
  double inv_a = 0.0;  // (W - w)/W
  double coef = 0.0;   // multiplier of u u' inside the bracket
};

Downdate downdate_terms(double wt, double wn, double s) {
  Downdate out;
  if (wn == 0.0) {
    out.ok = true;
    out.inv_a = 1.0;
    return out;
  }
  if (!(wt - wn > kDowndateEps * wt)) return out;
  const double r = wn / wt;
  const double den = 1.0 - r * s;
  if (!(den > kDowndateEps)) return out;
  out.ok = true;
  out.inv_a = (wt - wn) / wt;
  out.coef = r / den;
  return out;
}

}  // namespace

std::optional<Eigen::MatrixXd> LooDowndater::downdated_inverse(Eigen::Index d, Eigen::Index n) const {
  if (!ok_[static_cast<size_t>(d)]) return std::nullopt;
  const Eigen::VectorXd b = b_.row(n).transpose();
  const Eigen::MatrixXd& inv = inv_[static_cast<size_t>(d)];
  const Eigen::VectorXd u = inv * b;
  const Downdate dd = downdate_terms(totals_(d), w_(n, d), b.dot(u));
  if (!dd.ok) return std::nullopt;
  return symmetrize(dd.inv_a * (inv + dd.coef * u * u.transpose()));
}

std::optional<Eigen::MatrixXd> LooDowndater::loo_precision(Eigen::Index n) const {
  const Eigen::Index k = b_.cols();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index d = 0; d < bases(); ++d) {
    if (w_(n, d) == 0.0) continue;
    const auto inv = downdated_inverse(d, n);
    if (!inv) return std::nullopt;
    acc += w_(n, d) * *inv;
  }
  return symmetrize(acc);
}

std::vector<std::optional<Eigen::MatrixXd>> LooDowndater::all_loo_precisions() const {
  const Eigen::Index n_count = points();
  const Eigen::Index d_count = bases();
  const Eigen::Index k = b_.cols();
  Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(d_count, k * k);
  Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(d_count * k, k);  // rows d*K..d*K+K-1 = inv_d
  for (Eigen::Index d = 0; d < d_count; ++d) {
    if (ok_[static_cast<size_t>(d)]) {
      const Eigen::MatrixXd& inv = inv_[static_cast<size_t>(d)];
      flat.row(d) = Eigen::Map<const Eigen::RowVectorXd>(inv.data(), k * k);
      stacked.middleRows(d * k, k) = inv;
    }
  }
  // Column n of u_all, read as a K x D matrix, holds u_dn = inv_d b_n in column d.
  const Eigen::MatrixXd u_all = stacked * b_.transpose();
  Eigen::MatrixXd scale(n_count, d_count);
  Eigen::MatrixXd coef(n_count, d_count);
  std::vector<bool> bad(static_cast<size_t>(n_count), false);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::Map<const Eigen::MatrixXd> un(u_all.col(n).data(), k, d_count);
    const Eigen::VectorXd s = un.transpose() * b_.row(n).transpose();
    for (Eigen::Index d = 0; d < d_count; ++d) {
      const double wn = w_(n, d);
      scale(n, d) = 0.0;
      coef(n, d) = 0.0;
      if (wn == 0.0) continue;
      const Downdate dd = ok_[static_cast<size_t>(d)] ? downdate_terms(totals_(d), wn, s(d)) : Downdate{};
      if (!dd.ok) {
        bad[static_cast<size_t>(n)] = true;
        continue;
      }
      scale(n, d) = wn * dd.inv_a;
      coef(n, d) = wn * dd.inv_a * dd.coef;
    }
  }
  const Eigen::MatrixXd base = scale * flat;
  std::vector<std::optional<Eigen::MatrixXd>> out(static_cast<size_t>(n_count));
  for (Eigen::Index n = 0; n < n_count; ++n) {
    if (bad[static_cast<size_t>(n)]) continue;
    const Eigen::Map<const Eigen::MatrixXd> un(u_all.col(n).data(), k, d_count);
    Eigen::MatrixXd acc = unflatten(base, n, k);
    acc.noalias() += un * coef.row(n).asDiagonal() * un.transpose();
    out[static_cast<size_t>(n)] = symmetrize(acc);
  }
  return out;
}

LooDowndater loo_basis_downdate(const TimePoints& times, const WeightScheme& scheme,
                                const Eigen::MatrixXd& sampled_b) {
  return LooDowndater(weight_matrix(times.values(), scheme), sampled_b);
}

Eigen::MatrixXd sample_factors(const EStepStats& stats, std::uint64_t seed, bool deterministic) {
  Eigen::MatrixXd b = stats.eta;
  if (stats.xi2.size() > 0) b = stats.xi2.cwiseSqrt().asDiagonal() * b;
  if (deterministic) return b;
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index k = b.cols();
  Eigen::VectorXd z(k);
  for (Eigen::Index n = 0; n < b.rows(); ++n) {
    for (Eigen::Index i = 0; i < k; ++i) z(i) = nd(rng);
    SpdFactor f(stats.psi[static_cast<size_t>(n)], "posterior factor covariance");
    b.row(n) += (f.lower() * z).transpose();
  }
  return b;
}

bool better_score(const BandwidthScore& a, const BandwidthScore& b) {
  if (a.skipped != b.skipped) return a.skipped < b.skipped;
  if (a.value != b.value) return a.value > b.value;
  return a.h0 < b.h0;
}

namespace {

/// Sum of log-densities at the observed points under the given factor precisions.
BandwidthScore score_precisions(const Eigen::MatrixXd& obs, const TimePoints& times,
                                const FactorModelParams& params,
                                const std::vector<std::optional<Eigen::MatrixXd>>& precs,
                                const Family& family) {
  BandwidthScore out;
  const bool tv = params.tv_sigma.has_value();
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
  for (Eigen::Index n = 0; n < obs.rows(); ++n) {
    const auto& p = precs[static_cast<size_t>(n)];
    if (!p) {
      ++out.skipped;
      continue;
    }
    SpdFactor lf;
    if (!lf.try_compute(*p)) {
      ++out.skipped;
      continue;
    }
    double quad;
    double log_det;
    if (tv) {
      const FactorPosterior fp =
          factor_posterior(obs.row(n).transpose(), *p, params.B, params.sigma_vector_at(times[n]));
      quad = fp.quad;
      log_det = fp.log_det;
    } else {
      SpdFactor pf;
      if (!pf.try_compute(*p + bsb)) {
        ++out.skipped;
        continue;
      }
      const Eigen::VectorXd v = v_all.row(n).transpose();
      quad = yq_all(n) - v.dot(pf.solve(v));
      log_det = log_sigma - lf.log_det() + pf.log_det();
    }
    out.value += family_log_density(quad, log_det, obs.cols(), family);
  }
  return out;
}

}  // namespace

BandwidthScore bandwidth_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                                   const FactorModelParams& params, const EStepStats& stats,
                                   double h0, const Eigen::MatrixXd& sampled_b,
                                   const Family& family) {
  if (!(h0 > 0.0)) throw ConfigError("bandwidth must be positive");
  check_observations(obs, times);
  if (obs.rows() < 2) throw DataError("bandwidth selection needs at least two observations");
  if (sampled_b.rows() != stats.size()) throw ConfigError("draw count differs from stats");
  const WeightScheme scheme = params.weights.with_bandwidth(h0);
  const LooDowndater dd(weight_matrix(times.values(), scheme), sampled_b);
  BandwidthScore s = score_precisions(obs, times, params, dd.all_loo_precisions(), family);
  s.h0 = h0;
  return s;
}

BandwidthScore bandwidth_objective(const Eigen::MatrixXd& obs, const TimePoints& times,
                                   const FactorModelParams& params, double h0, std::uint64_t seed,
                                   bool deterministic, const Family& family) {
  const EStepStats stats = posterior_pass(obs, times, params, family);
  const Eigen::MatrixXd b = sample_factors(stats, seed, deterministic);
  return bandwidth_objective(obs, times, params, stats, h0, b, family);
}

AdaptiveFit fit_adaptive(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                         const Family& family, const FitConfig& config, const BandwidthConfig& bw,
                         const std::optional<Eigen::VectorXd>& centers) {
  const std::vector<double> grid = bw.grid.empty() ? default_bandwidth_grid(times) : bw.grid;
  if (grid.empty()) throw ConfigError("bandwidth grid is empty");
  const Eigen::VectorXd c = centers ? *centers : times.values();

  if (!bw.dynamic) {
    std::optional<AdaptiveFit> best;
    BandwidthScore best_score;
    for (size_t i = 0; i < grid.size(); ++i) {
      const WeightScheme scheme = WeightScheme::shared(c, grid[i]);
      FitResult r = fit_family(obs, times, scheme, config, family, std::nullopt, {}, k);
      const Eigen::MatrixXd b =
          sample_factors(r.stats, derive_seed(bw.seed, "loo-draw", i), bw.deterministic);
      const BandwidthScore s = bandwidth_objective(obs, times, r.params, r.stats, grid[i], b, family);
      if (!best || better_score(s, best_score)) {
        best_score = s;
        best = AdaptiveFit{std::move(r.params), std::move(r.report), std::move(r.stats), grid[i]};
      }
    }
    best->report.bandwidth_trace = {best->h0};
    return *best;
  }

  double current = grid[grid.size() / 2];
  int rounds = 0;
  int stable = 0;
  bool frozen = grid.size() == 1;
  std::vector<double> history;
  const IterationHook hook = [&](int iter, FactorModelParams& params, const EStepStats& stats) {
    if (frozen || iter < bw.start_iter) return false;
    const Eigen::MatrixXd b = sample_factors(
        stats, derive_seed(bw.seed, "loo-draw", static_cast<std::uint64_t>(rounds)), bw.deterministic);
    BandwidthScore best;
    bool have = false;
    for (double h : grid) {
      const BandwidthScore s = bandwidth_objective(obs, times, params, stats, h, b, family);
      if (!have || better_score(s, best)) {
        best = s;
        have = true;
      }
    }
    ++rounds;
    history.push_back(best.h0);
    stable = (best.h0 == current) ? stable + 1 : 1;
    if (stable >= bw.stable_rounds || rounds >= bw.max_rounds) frozen = true;
    if (best.h0 == current) return false;
    current = best.h0;
    params.weights = params.weights.with_bandwidth(current);
    return true;
  };
  const WeightScheme scheme = WeightScheme::shared(c, current);
  FitResult r = fit_family(obs, times, scheme, config, family, std::nullopt, hook, k);
  AdaptiveFit out{std::move(r.params), std::move(r.report), std::move(r.stats), current};
  out.report.bandwidth_trace = std::move(history);
  return out;
}

double select_bandwidth(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                        const std::vector<double>& grid, bool dynamic, const FitConfig& config,
                        const Family& family, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("bandwidth grid is empty");
  BandwidthConfig bw;
  bw.grid = grid;
  bw.dynamic = dynamic;
  bw.seed = seed;
  return fit_adaptive(obs, times, k, family, config, bw).h0;
}

Eigen::VectorXd validation_terms(const Eigen::MatrixXd& held_out, const Eigen::VectorXd& times,
                                 const FactorModelParams& params, const Family& family) {
  if (held_out.rows() != times.size()) throw DataError("held-out rows differ from times");
  Eigen::VectorXd out(held_out.rows());
  if (held_out.rows() == 0) return out;
  const Eigen::MatrixXd w = weight_matrix(times, params.weights);
  const BasisInverses inv = invert_basis(params.basis);
  const Eigen::MatrixXd acc = accumulate_precisions(w, inv);
  for (Eigen::Index n = 0; n < held_out.rows(); ++n) {
    const FactorPosterior fp = factor_posterior(held_out.row(n).transpose(), unflatten(acc, n, params.K()),
                                                params.B, params.sigma_vector_at(times(n)));
    out(n) = family_log_density(fp.quad, fp.log_det, held_out.cols(), family);
  }
  return out;
}

double validation_score(const Eigen::MatrixXd& held_out, const Eigen::VectorXd& held_out_times,
                        const FactorModelParams& params, const Family& family) {
  if (held_out.rows() == 0) return 0.0;
  return validation_terms(held_out, held_out_times, params, family).sum();
}

AdaptiveFit fit_for_selection(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                              const SelectionConfig& config, std::uint64_t fit_seed,
                              std::uint64_t bw_seed) {
  FitConfig fc = config.fit;
  fc.seed = fit_seed;
  if (!config.heteroscedastic) {
    FitResult r = fit_family(obs, times, WeightScheme::single(), fc, config.family, std::nullopt, {}, k);
    return AdaptiveFit{std::move(r.params), std::move(r.report), std::move(r.stats), 0.0};
  }
  BandwidthConfig bw = config.bandwidth;
  bw.seed = bw_seed;
  return fit_adaptive(obs, times, k, config.family, fc, bw);
}

SelectionResult select_K(const Eigen::MatrixXd& obs, const TimePoints& times,
                         const std::vector<Eigen::Index>& candidates, const SplitPlan& plan,
                         const SelectionConfig& config) {
  if (candidates.empty()) throw ConfigError("candidate set of factor counts is empty");
  check_observations(obs, times);
  const std::vector<Split> splits = make_splits(obs.rows(), plan);
  SelectionResult res;
  const std::uint64_t seed = config.fit.seed;
  for (Eigen::Index k : candidates) {
    if (k < 1) throw ConfigError("factor counts must be positive");
    double total = 0.0;
    int ok = 0;
    for (size_t s = 0; s < splits.size(); ++s) {
      const Split& sp = splits[s];
      SplitScore sc;
      sc.k = k;
      sc.split = static_cast<int>(s);
      try {
        const Eigen::MatrixXd tr = take_rows(obs, sp.train);
        const TimePoints tt = times.subset(sp.train);
        const AdaptiveFit f = fit_for_selection(
            tr, tt, k, config, derive_seed(seed, "fit", static_cast<std::uint64_t>(k), s),
            derive_seed(seed, "bandwidth", static_cast<std::uint64_t>(k), s));
        const Eigen::MatrixXd va = take_rows(obs, sp.validation);
        Eigen::VectorXd vt(static_cast<Eigen::Index>(sp.validation.size()));
        for (size_t i = 0; i < sp.validation.size(); ++i) vt(static_cast<Eigen::Index>(i)) = times[sp.validation[i]];
        sc.score = validation_score(va, vt, f.params, config.family);
        sc.h0 = f.h0;
        sc.ok = std::isfinite(sc.score);
        if (!sc.ok) sc.error = "non-finite validation score";
        if (sc.ok && config.on_fit) config.on_fit(k, static_cast<int>(s), sp, f.params);
      } catch (const NumericError& e) {
        sc.error = e.what();
      }
      if (sc.ok) {
        total += sc.score;
        ++ok;
      }
      res.split_scores.push_back(sc);
    }
    if (ok > 0) res.v_table[k] = total / ok;
  }
  if (res.v_table.empty()) throw NumericError("every candidate factor count failed on every split");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [k, v] : res.v_table) {
    if (v > best) {
      best = v;
      res.k_hat = k;
    }
  }
  if (config.refit) {
    res.final_fit = fit_for_selection(obs, times, res.k_hat, config,
                                      derive_seed(seed, "final-fit", static_cast<std::uint64_t>(res.k_hat)),
                                      derive_seed(seed, "final-bandwidth", static_cast<std::uint64_t>(res.k_hat)));
    res.h_hat = res.final_fit->h0;
  }
  return res;
}

}  // namespace tvfactor
