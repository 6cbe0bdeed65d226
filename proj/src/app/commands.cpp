#include "tvfactor/app/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "tvfactor/app/forecast.hpp"
#include "tvfactor/em_robust.hpp"
#include "tvfactor/identification.hpp"
#include "tvfactor/linalg.hpp"
#include "tvfactor/model_selection.hpp"
#include "tvfactor/simulation.hpp"

namespace tvfactor::app {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// --- JSON helpers ----------------------------------------------------------------------

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::MatrixXd matrix_from(const json& j) {
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  const Eigen::Index c = r ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != c) throw DataError("model file: ragged matrix");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json scheme_json(const WeightScheme& s) {
  json j;
  j["centers"] = to_json(s.centers);
  j["bandwidths"] = to_json(s.bandwidths);
  return j;
}

WeightScheme scheme_from(const json& j) {
  WeightScheme s;
  s.centers = vector_from(j.at("centers"));
  s.bandwidths = vector_from(j.at("bandwidths"));
  s.validate();
  return s;
}

json basis_json(const BasisSet& b) {
  json a = json::array();
  for (const auto& l : b.lambdas) a.push_back(to_json(l));
  return a;
}

BasisSet basis_from(const json& j) {
  BasisSet b;
  for (const auto& l : j) b.lambdas.push_back(matrix_from(l));
  return b;
}

json config_json(const RunConfig& c) {
  json j;
  j["model"] = c.model;
  j["k"] = c.k;
  j["kp"] = c.kp;
  j["bandwidth"] = c.bandwidth;
  j["static_bandwidth"] = c.static_bandwidth;
  j["centers"] = c.centers;
  j["split_mode"] = c.split_mode;
  j["split_ratio"] = c.split_ratio;
  j["split_count"] = c.split_count;
  j["nu"] = c.nu;
  j["regularization"] = c.regularization;
  j["iw_zeta"] = c.iw_zeta_set ? json(c.iw_zeta) : json(nullptr);
  j["iw_theta"] = c.iw_theta;
  j["tv_sigma"] = c.tv_sigma;
  j["trim_k"] = c.trim_k;
  j["log_returns"] = c.log_returns;
  j["layout"] = c.layout;
  j["seed"] = c.seed;
  j["max_iter"] = c.max_iter;
  j["rel_tol"] = c.rel_tol;
  j["train"] = c.train;
  j["train_fraction"] = c.train_fraction;
  j["ewma_alphas"] = c.ewma_alphas;
  j["pairs"] = c.pairs;
  j["grid_points"] = c.grid_points;
  j["sim_n"] = c.sim_n;
  j["sim_q"] = c.sim_q;
  j["sim_k"] = c.sim_k;
  j["sim_gamma"] = c.sim_gamma;
  j["sim_s2"] = c.sim_s2;
  j["sim_family"] = c.sim_family;
  return j;
}

// --- Report -----------------------------------------------------------------------------

/// Every report carries the same keys; sections that do not apply are null or empty.
struct Report {
  json j;
  std::vector<std::string> outputs;

  Report(const std::string& command, const RunConfig& cfg) {
    j["schema_version"] = 1;
    j["command"] = command;
    j["model"] = nullptr;
    j["config"] = config_json(cfg);
    j["data"] = nullptr;
    j["simulation"] = nullptr;
    j["k"] = nullptr;
    j["k_hat"] = nullptr;
    j["h0"] = nullptr;
    j["nu"] = nullptr;
    j["v_table"] = json::array();
    j["split_scores"] = json::array();
    j["fit"] = nullptr;
    j["identification"] = nullptr;
    j["forecast"] = nullptr;
    j["kl"] = nullptr;
    j["warnings"] = json::array();
    j["outputs"] = json::array();
  }
};

class Stopwatch {
 public:
  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    laps_[stage] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  std::string json_text() const {
    json j;
    for (const auto& [k, v] : laps_) j[k] = v;
    return j.dump(2) + "\n";
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> laps_;
};

void emit(const fs::path& dir, const std::string& name, const std::string& content, Report& r) {
  write_atomic(dir / name, content);
  r.outputs.push_back(name);
}

void finish(const fs::path& dir, Report& r, const Stopwatch& sw) {
  for (const auto& o : r.outputs) r.j["outputs"].push_back(o);
  write_atomic(dir / "report.json", r.j.dump(2) + "\n");
  write_atomic(dir / "timings.json", sw.json_text());
}

void prepare_out(const fs::path& out) {
  if (out.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

// --- Data -------------------------------------------------------------------------------

Dataset load_data(const CommandInputs& in, Report& r, Eigen::Index trim_rows = -1) {
  if (in.data.empty()) throw ConfigError("a data file is required (--data)");
  Dataset d = read_dataset(in.data, in.config.layout_kind());
  if (in.config.log_returns) d = log_returns(d);
  if (in.config.trim_k > 0.0) trim_outliers(d, in.config.trim_k, trim_rows < 0 ? d.obs.rows() : trim_rows);
  for (const auto& w : d.warnings) r.j["warnings"].push_back(w);
  json dj;
  dj["source"] = in.data.string();
  dj["layout"] = in.config.layout;
  dj["n"] = d.obs.rows();
  dj["q"] = d.panel.empty() ? d.obs.cols() : d.panel.front().rows();
  dj["p"] = d.panel.empty() ? 1 : d.panel.front().cols();
  r.j["data"] = dj;
  return d;
}

Family family_for(const RunConfig& c) {
  return is_robust(c.model_kind()) ? Family::student_t(c.nu) : Family::gaussian();
}

Eigen::Index single_k(const RunConfig& c) {
  const auto ks = parse_k_list(c.k);
  if (ks.size() != 1) throw ConfigError("this command takes one factor count (--k); use select for a range");
  return ks.front();
}

Eigen::VectorXd centers_for(const RunConfig& c, const TimePoints& times) {
  if (c.centers == 0) return times.values();
  if (c.centers == 1) return Eigen::VectorXd::Constant(1, 0.5 * (times[0] + times[times.size() - 1]));
  return Eigen::VectorXd::LinSpaced(c.centers, times[0], times[times.size() - 1]);
}

/// A single bandwidth: the given one, or the geometric middle of the default grid.
double fixed_bandwidth(const RunConfig& c, const TimePoints& times) {
  const auto given = parse_bandwidths(c.bandwidth);
  if (given.size() == 1) return given.front();
  if (given.size() > 1) throw ConfigError("this model takes a single bandwidth");
  const auto grid = default_bandwidth_grid(times);
  return std::sqrt(grid.front() * grid.back());
}

struct FactorFit {
  FactorModelParams params;
  FitReport report;
  double h0 = std::numeric_limits<double>::quiet_NaN();
};

FactorFit fit_factor(const Eigen::MatrixXd& obs, const TimePoints& times, Eigen::Index k,
                     const RunConfig& c) {
  const ModelKind m = c.model_kind();
  const Family family = family_for(c);
  const FitConfig fc = c.fit_config();
  FactorFit out;
  if (!is_heteroscedastic(m)) {
    FitResult r = fit_family(obs, times, WeightScheme::single(), fc, family, std::nullopt, {}, k);
    out.params = std::move(r.params);
    out.report = std::move(r.report);
    return out;
  }
  const auto grid = parse_bandwidths(c.bandwidth);
  const Eigen::VectorXd centers = centers_for(c, times);
  if (grid.size() == 1) {
    const WeightScheme scheme = WeightScheme::shared(centers, grid.front());
    FitResult r = fit_family(obs, times, scheme, fc, family, std::nullopt, {}, k);
    out.params = std::move(r.params);
    out.report = std::move(r.report);
    out.h0 = grid.front();
    return out;
  }
  BandwidthConfig bw;
  bw.grid = grid;
  bw.dynamic = !c.static_bandwidth;
  bw.seed = derive_seed(c.seed, "bandwidth");
  AdaptiveFit r = fit_adaptive(obs, times, k, family, fc, bw, centers);
  out.params = std::move(r.params);
  out.report = std::move(r.report);
  out.h0 = r.h0;
  return out;
}

json fit_json(const FitReport& r) {
  json j;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["objective"] = r.trace.empty() ? json(nullptr) : json(r.trace.back());
  j["trace_start"] = r.trace_start;
  j["trace"] = r.trace;
  j["bandwidth_trace"] = r.bandwidth_trace;
  return j;
}

std::vector<std::string> default_names(Eigen::Index q) {
  std::vector<std::string> n;
  for (Eigen::Index i = 0; i < q; ++i) n.push_back("y" + std::to_string(i + 1));
  return n;
}

std::vector<std::string> indexed(const std::string& stem, Eigen::Index count) {
  std::vector<std::string> n;
  for (Eigen::Index i = 0; i < count; ++i) n.push_back(stem + std::to_string(i + 1));
  return n;
}

/// Pairwise correlations and standard deviations on an even time grid.
std::string correlation_plot(const SavedModel& m, const RunConfig& c, double t0, double t1) {
  const auto pairs = parse_pairs(c.pairs);
  const Eigen::Index dim = m.covariance(t0).rows();
  std::set<Eigen::Index> coords;
  for (const auto& [a, b] : pairs) {
    if (a >= dim || b >= dim) throw ConfigError("plot pair index out of range (dimension " + std::to_string(dim) + ")");
    coords.insert(a);
    coords.insert(b);
  }
  std::vector<std::string> header{"t"};
  for (const auto& [a, b] : pairs) header.push_back("corr_" + std::to_string(a) + "_" + std::to_string(b));
  for (Eigen::Index i : coords) header.push_back("sd_" + std::to_string(i));
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(c.grid_points, t0, t1);
  Eigen::MatrixXd out(grid.size(), static_cast<Eigen::Index>(header.size()));
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    const Eigen::MatrixXd s = m.covariance(grid(g));
    Eigen::Index col = 0;
    out(g, col++) = grid(g);
    for (const auto& [a, b] : pairs) out(g, col++) = s(a, b) / std::sqrt(s(a, a) * s(b, b));
    for (Eigen::Index i : coords) out(g, col++) = std::sqrt(s(i, i));
  }
  return matrix_csv(out, header);
}

void write_model(const fs::path& dir, const SavedModel& m, const RunConfig& c, double t0, double t1,
                 Report& r) {
  emit(dir, "model.json", model_json(m), r);
  if (is_factor_model(m.kind)) {
    emit(dir, "B.csv", matrix_csv(m.factor.B, indexed("factor", m.factor.K())), r);
    emit(dir, "Sigma.csv", matrix_csv(m.factor.sigma, {"sigma"}), r);
    for (Eigen::Index d = 0; d < m.factor.basis.size(); ++d) {
      emit(dir, "lambda_" + std::to_string(d) + ".csv",
           matrix_csv(m.factor.basis.lambdas[static_cast<size_t>(d)]), r);
    }
    if (m.factor.tv_sigma) {
      Eigen::MatrixXd nu(m.factor.tv_sigma->nu.front().size(), m.factor.Q());
      for (Eigen::Index q = 0; q < m.factor.Q(); ++q) nu.col(q) = m.factor.tv_sigma->nu[static_cast<size_t>(q)];
      emit(dir, "Sigma_bases.csv", matrix_csv(nu, m.names), r);
    }
  } else if (m.st) {
    const SpatioTemporalParams& p = *m.st;
    emit(dir, "B.csv", matrix_csv(p.B), r);
    emit(dir, "C.csv", matrix_csv(p.C), r);
    emit(dir, "Sigma.csv", matrix_csv(p.sigma, {"sigma"}), r);
    emit(dir, "Phi.csv", matrix_csv(p.phi, {"phi"}), r);
    for (Eigen::Index d = 0; d < p.L.size(); ++d) {
      emit(dir, "lambda_" + std::to_string(d) + ".csv", matrix_csv(p.L.lambdas[static_cast<size_t>(d)]), r);
    }
    for (Eigen::Index d = 0; d < p.G.size(); ++d) {
      emit(dir, "gamma_" + std::to_string(d) + ".csv", matrix_csv(p.G.lambdas[static_cast<size_t>(d)]), r);
    }
  } else if (m.ewma) {
    emit(dir, "W.csv", matrix_csv(m.ewma->W), r);
    emit(dir, "Sigma.csv", matrix_csv(m.ewma->sigma, {"sigma"}), r);
  } else if (m.nonfactor) {
    for (Eigen::Index d = 0; d < m.nonfactor->basis.size(); ++d) {
      emit(dir, "lambda_" + std::to_string(d) + ".csv",
           matrix_csv(m.nonfactor->basis.lambdas[static_cast<size_t>(d)]), r);
    }
  }
  emit(dir, "plotdata_correlation.csv", correlation_plot(m, c, t0, t1), r);
}

SavedModel factor_model(const RunConfig& c, FactorModelParams p, std::vector<std::string> names) {
  SavedModel m;
  m.kind = c.model_kind();
  m.family = family_for(c);
  m.factor = std::move(p);
  m.names = std::move(names);
  return m;
}

}  // namespace

// --- SavedModel -------------------------------------------------------------------------

Eigen::MatrixXd SavedModel::covariance(double t) const {
  if (is_factor_model(kind)) return marginal_covariance(t, factor);
  if (st) return st_marginal_covariance(t, *st);
  if (ewma) return ewma->covariance_at(t);
  if (nonfactor) return nonfactor->lambda_at(t);
  throw ConfigError("model has no covariance");
}

std::string model_json(const SavedModel& m) {
  json j;
  j["kind"] = to_string(m.kind);
  j["family"] = m.family.robust() ? "student_t" : "gaussian";
  j["nu"] = m.family.robust() ? json(m.family.nu) : json(nullptr);
  j["names"] = m.names;
  if (is_factor_model(m.kind)) {
    j["B"] = to_json(m.factor.B);
    j["sigma"] = to_json(m.factor.sigma);
    j["weights"] = scheme_json(m.factor.weights);
    j["lambdas"] = basis_json(m.factor.basis);
    if (m.factor.tv_sigma) {
      json tv;
      tv["weights"] = scheme_json(m.factor.tv_sigma->scheme(0));
      json nu = json::array();
      for (const auto& v : m.factor.tv_sigma->nu) nu.push_back(to_json(v));
      tv["nu"] = nu;
      j["tv_sigma"] = tv;
    } else {
      j["tv_sigma"] = nullptr;
    }
  } else if (m.st) {
    const SpatioTemporalParams& p = *m.st;
    j["variant"] = p.variant == StVariant::kA ? "A" : "B";
    j["B"] = to_json(p.B);
    j["C"] = to_json(p.C);
    j["sigma"] = to_json(p.sigma);
    j["phi"] = to_json(p.phi);
    j["omega"] = scheme_json(p.omega);
    j["L"] = basis_json(p.L);
    j["rho"] = p.variant == StVariant::kB ? scheme_json(p.rho) : json(nullptr);
    j["G"] = basis_json(p.G);
  } else if (m.ewma) {
    j["W"] = to_json(m.ewma->W);
    j["alpha"] = m.ewma->alpha;
    j["z"] = to_json(m.ewma->z);
    j["positions"] = to_json(m.ewma->positions);
    j["sigma"] = to_json(m.ewma->sigma);
  } else if (m.nonfactor) {
    j["weights"] = scheme_json(m.nonfactor->scheme);
    j["lambdas"] = basis_json(m.nonfactor->basis);
  }
  return j.dump(1) + "\n";
}

SavedModel load_model(const fs::path& dir) {
  const fs::path path = dir / "model.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SavedModel m;
  try {
    const json j = json::parse(in);
    m.kind = parse_model(j.at("kind").get<std::string>());
    m.family = j.at("family").get<std::string>() == "student_t" ? Family::student_t(j.at("nu").get<double>())
                                                                 : Family::gaussian();
    m.names = j.at("names").get<std::vector<std::string>>();
    if (is_factor_model(m.kind)) {
      m.factor.B = matrix_from(j.at("B"));
      m.factor.sigma = vector_from(j.at("sigma"));
      m.factor.weights = scheme_from(j.at("weights"));
      m.factor.basis = basis_from(j.at("lambdas"));
      if (!j.at("tv_sigma").is_null()) {
        TimeVaryingSigma tv;
        tv.schemes = {scheme_from(j.at("tv_sigma").at("weights"))};
        for (const auto& v : j.at("tv_sigma").at("nu")) tv.nu.push_back(vector_from(v));
        m.factor.tv_sigma = tv;
      }
      m.factor.validate();
    } else if (m.kind == ModelKind::kStA || m.kind == ModelKind::kStB) {
      SpatioTemporalParams p;
      p.variant = j.at("variant").get<std::string>() == "A" ? StVariant::kA : StVariant::kB;
      p.B = matrix_from(j.at("B"));
      p.C = matrix_from(j.at("C"));
      p.sigma = vector_from(j.at("sigma"));
      p.phi = vector_from(j.at("phi"));
      p.omega = scheme_from(j.at("omega"));
      p.L = basis_from(j.at("L"));
      if (!j.at("rho").is_null()) p.rho = scheme_from(j.at("rho"));
      p.G = basis_from(j.at("G"));
      p.validate();
      m.st = p;
    } else if (m.kind == ModelKind::kEwma) {
      EwmaModel e;
      e.W = matrix_from(j.at("W"));
      e.alpha = j.at("alpha").get<double>();
      e.z = matrix_from(j.at("z"));
      e.positions = vector_from(j.at("positions"));
      e.sigma = vector_from(j.at("sigma"));
      m.ewma = e;
    } else {
      NonFactorModel nf;
      nf.scheme = scheme_from(j.at("weights"));
      nf.basis = basis_from(j.at("lambdas"));
      m.nonfactor = nf;
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

// --- Commands ---------------------------------------------------------------------------

void run_simulate(const CommandInputs& in) {
  const RunConfig& c = in.config;
  c.validate();
  prepare_out(in.out);
  Stopwatch sw;
  Report r("simulate", c);
  SimulationSpec spec;
  spec.N = c.sim_n;
  spec.Q = c.sim_q;
  spec.K = c.sim_k;
  spec.gamma = c.sim_gamma;
  spec.s2 = c.sim_s2;
  spec.family = c.sim_family == "t" ? Family::student_t(c.nu) : Family::gaussian();
  spec.seed = c.seed;
  const SimulationResult sim = simulate(spec);
  sw.lap("simulate");

  json sj;
  sj["N"] = spec.N;
  sj["Q"] = spec.Q;
  sj["K"] = spec.K;
  sj["gamma"] = spec.gamma;
  sj["s2"] = spec.s2;
  sj["family"] = spec.family.robust() ? "student_t" : "gaussian";
  sj["nu"] = spec.family.robust() ? json(spec.family.nu) : json(nullptr);
  sj["seed"] = spec.seed;
  r.j["simulation"] = sj;
  json dj;
  dj["source"] = nullptr;
  dj["layout"] = "wide";
  dj["n"] = spec.N;
  dj["q"] = spec.Q;
  dj["p"] = 1;
  r.j["data"] = dj;

  emit(in.out, "data.csv", wide_csv(sim.times.values(), sim.obs, default_names(spec.Q)), r);
  emit(in.out, "truth_B.csv", matrix_csv(sim.truth.B, indexed("factor", spec.K)), r);
  emit(in.out, "truth_Sigma.csv", matrix_csv(sim.truth.sigma, {"sigma"}), r);
  Eigen::MatrixXd lam(spec.N, 1 + spec.K * spec.K);
  std::vector<std::string> header{"t"};
  for (Eigen::Index j = 0; j < spec.K; ++j) {
    for (Eigen::Index i = 0; i < spec.K; ++i) header.push_back("l_" + std::to_string(i) + "_" + std::to_string(j));
  }
  for (Eigen::Index n = 0; n < spec.N; ++n) {
    lam(n, 0) = sim.times[n];
    lam.row(n).tail(spec.K * spec.K) =
        Eigen::Map<const Eigen::RowVectorXd>(sim.truth.lambda[static_cast<size_t>(n)].data(), spec.K * spec.K);
  }
  emit(in.out, "truth_lambda.csv", matrix_csv(lam, header), r);
  sw.lap("write");
  finish(in.out, r, sw);
}

void run_fit(const CommandInputs& in) {
  const RunConfig& c = in.config;
  c.validate();
  prepare_out(in.out);
  Stopwatch sw;
  Report r("fit", c);
  const Dataset data = load_data(in, r);
  sw.lap("load");
  const ModelKind kind = c.model_kind();
  r.j["model"] = to_string(kind);
  const Eigen::Index k = kind == ModelKind::kNonfactor ? 0 : single_k(c);
  if (k > 0) r.j["k"] = k;
  const TimePoints& times = data.times;
  SavedModel model;
  model.kind = kind;
  model.names = data.names;

  if (is_factor_model(kind)) {
    const FactorFit f = fit_factor(data.obs, times, k, c);
    r.j["fit"] = fit_json(f.report);
    r.j["h0"] = std::isnan(f.h0) ? json(nullptr) : json(f.h0);
    if (is_robust(kind)) r.j["nu"] = c.nu;
    model = factor_model(c, f.params, data.names);
  } else if (kind == ModelKind::kStA || kind == ModelKind::kStB) {
    const StVariant variant = kind == ModelKind::kStA ? StVariant::kA : StVariant::kB;
    const double h = fixed_bandwidth(c, times);
    const WeightScheme omega = WeightScheme::shared(centers_for(c, times), h);
    const Eigen::Index q = data.panel.front().rows();
    const Eigen::Index p = data.panel.front().cols();
    const SpatioTemporalParams init =
        st_initial_params(variant, q, p, k, c.kp, omega, omega, derive_seed(c.seed, "st-init"));
    StFitConfig sc;
    sc.max_iter = c.max_iter;
    sc.rel_tol = c.rel_tol;
    sc.seed = c.seed;
    const StFitResult f = fit_st(data.panel, times, init, sc);
    r.j["fit"] = fit_json(f.report);
    r.j["h0"] = h;
    model.st = f.params;
  } else if (kind == ModelKind::kEwma) {
    const EwmaSelection sel = ewma_select(data.obs, {k}, c.alpha_grid());
    EwmaModel e = ewma_fit(data.obs, k, sel.alpha);
    json fj;
    fj["alpha"] = sel.alpha;
    fj["loo_score"] = sel.score;
    r.j["fit"] = fj;
    model.ewma = e;
  } else {
    const double h = fixed_bandwidth(c, times);
    model.nonfactor = nonfactor_map(data.obs, times, WeightScheme::shared(centers_for(c, times), h));
    r.j["h0"] = h;
  }
  sw.lap("fit");
  // EWMA evaluates at series positions.
  const bool positional = kind == ModelKind::kEwma;
  write_model(in.out, model, c, positional ? 1.0 : times[0],
              positional ? static_cast<double>(times.size()) : times[times.size() - 1], r);
  sw.lap("write");
  finish(in.out, r, sw);
}

void run_select(const CommandInputs& in) {
  const RunConfig& c = in.config;
  c.validate();
  prepare_out(in.out);
  Stopwatch sw;
  Report r("select", c);
  const Dataset data = load_data(in, r);
  sw.lap("load");
  const ModelKind kind = c.model_kind();
  r.j["model"] = to_string(kind);
  const auto ks = parse_k_list(c.k);
  const TimePoints& times = data.times;

  if (kind == ModelKind::kEwma) {
    const EwmaSelection sel = ewma_select(data.obs, ks, c.alpha_grid());
    r.j["k_hat"] = sel.k;
    r.j["k"] = sel.k;
    json fj;
    fj["alpha"] = sel.alpha;
    fj["loo_score"] = sel.score;
    r.j["fit"] = fj;
    SavedModel m;
    m.kind = kind;
    m.names = data.names;
    m.ewma = ewma_fit(data.obs, sel.k, sel.alpha);
    sw.lap("select");
    write_model(in.out, m, c, 1.0, static_cast<double>(times.size()), r);
    sw.lap("write");
    finish(in.out, r, sw);
    return;
  }
  if (!is_factor_model(kind)) throw ConfigError("select supports ghofm, ghefm, rhofm, rhefm and ewma");

  SelectionConfig sc;
  sc.fit = c.fit_config();
  sc.family = family_for(c);
  sc.heteroscedastic = is_heteroscedastic(kind);
  sc.bandwidth.grid = parse_bandwidths(c.bandwidth);
  sc.bandwidth.dynamic = !c.static_bandwidth;
  sc.bandwidth.seed = derive_seed(c.seed, "bandwidth");
  sc.refit = true;
  const SelectionResult sel = select_K(data.obs, times, ks, c.split_plan(), sc);
  sw.lap("select");
  r.j["k_hat"] = sel.k_hat;
  r.j["k"] = sel.k_hat;
  r.j["h0"] = sc.heteroscedastic ? json(sel.h_hat) : json(nullptr);
  if (is_robust(kind)) r.j["nu"] = c.nu;
  for (const auto& [k, v] : sel.v_table) r.j["v_table"].push_back({{"k", k}, {"v", v}});
  for (const auto& s : sel.split_scores) {
    r.j["split_scores"].push_back({{"k", s.k},
                                   {"split", s.split},
                                   {"ok", s.ok},
                                   {"score", s.ok ? json(s.score) : json(nullptr)},
                                   {"h0", s.ok && sc.heteroscedastic ? json(s.h0) : json(nullptr)},
                                   {"error", s.error}});
  }
  r.j["fit"] = fit_json(sel.final_fit->report);
  write_model(in.out, factor_model(c, sel.final_fit->params, data.names), c, times[0],
              times[times.size() - 1], r);
  sw.lap("write");
  finish(in.out, r, sw);
}

void run_identify(const CommandInputs& in) {
  const RunConfig& c = in.config;
  c.validate();
  prepare_out(in.out);
  Stopwatch sw;
  Report r("identify", c);
  if (in.model_dir.empty()) throw ConfigError("identify needs --model-dir (output of fit or select)");
  const SavedModel m = load_model(in.model_dir);
  if (!is_factor_model(m.kind)) throw ConfigError("identify applies to factor models only");
  r.j["model"] = to_string(m.kind);
  r.j["k"] = m.factor.K();
  const IdentifiedModel id = identify(m.factor);
  sw.lap("identify");
  json ij;
  ij["tau"] = id.rotation.tau;
  ij["steps"] = id.rotation.steps;
  ij["tau_changes"] = id.rotation.tau_changes;
  ij["objective"] = id.rotation.objective.empty() ? json(nullptr) : json(id.rotation.objective.back());
  r.j["identification"] = ij;

  SavedModel out = m;
  out.factor = id.params;
  emit(in.out, "A.csv", matrix_csv(id.rotation.A), r);
  const Eigen::VectorXd& cs = m.factor.weights.centers;
  const double t0 = cs.size() ? cs.minCoeff() : 0.0;
  const double t1 = cs.size() ? cs.maxCoeff() : 1.0;
  write_model(in.out, out, c, t0, t1, r);

  // Time-varying loadings B chol(Lambda_t) on the plot grid, one column per (q, k).
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(c.grid_points, t0, t1);
  const Eigen::Index q = id.params.Q();
  const Eigen::Index k = id.params.K();
  Eigen::MatrixXd lm(grid.size(), 1 + q * k);
  std::vector<std::string> header{"t"};
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < q; ++i) header.push_back("b_" + std::to_string(i) + "_" + std::to_string(j));
  }
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    const Eigen::MatrixXd b = time_varying_loadings(id.params, grid(g));
    lm(g, 0) = grid(g);
    lm.row(g).tail(q * k) = Eigen::Map<const Eigen::RowVectorXd>(b.data(), q * k);
  }
  emit(in.out, "plotdata_loadings.csv", matrix_csv(lm, header), r);
  sw.lap("write");
  finish(in.out, r, sw);
}

void run_forecast(const CommandInputs& in) {
  const RunConfig& c = in.config;
  c.validate();
  prepare_out(in.out);
  Stopwatch sw;
  Report r("forecast", c);
  const ModelKind kind = c.model_kind();
  if (!is_factor_model(kind) && kind != ModelKind::kEwma) {
    throw ConfigError("forecast supports ghofm, ghefm, rhofm, rhefm and ewma");
  }
  // Trimming uses the training window only, so peek at the row count first.
  const Dataset raw = read_dataset(in.data.empty() ? throw ConfigError("a data file is required (--data)") : in.data,
                                   c.layout_kind());
  const Eigen::Index n_all = raw.obs.rows() - (c.log_returns ? 1 : 0);
  const Eigen::Index n_train =
      c.train > 0 ? c.train : static_cast<Eigen::Index>(std::floor(c.train_fraction * static_cast<double>(n_all)));
  if (n_train < 2 || n_train > n_all) throw ConfigError("training length must lie in [2, N]");
  const Dataset data = load_data(in, r, n_train);
  sw.lap("load");
  r.j["model"] = to_string(kind);
  const Eigen::Index k = single_k(c);
  r.j["k"] = k;

  std::vector<Eigen::Index> train(static_cast<size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) train[static_cast<size_t>(i)] = i;
  Eigen::VectorXd scores(data.obs.rows() - n_train);
  json fj;
  if (kind == ModelKind::kEwma) {
    const EwmaSelection sel = ewma_select(data.obs.topRows(n_train), {k}, c.alpha_grid());
    scores = forecast_ewma(data.obs, n_train, k, {sel.alpha}).col(0);
    fj["alpha"] = sel.alpha;
    r.j["fit"] = fj;
  } else {
    const FactorFit f = fit_factor(take_rows(data.obs, train), data.times.subset(train), k, c);
    r.j["fit"] = fit_json(f.report);
    r.j["h0"] = std::isnan(f.h0) ? json(nullptr) : json(f.h0);
    if (is_robust(kind)) r.j["nu"] = c.nu;
    ForecastConfig fc;
    fc.seed = derive_seed(c.seed, "forecast");
    fc.regularization = c.regularization_config();
    const ForecastResult res = forecast_factor(data.obs, data.times, n_train, f.params, family_for(c), fc);
    for (size_t i = 0; i < res.steps.size(); ++i) scores(static_cast<Eigen::Index>(i)) = res.steps[i].score;
  }
  sw.lap("forecast");
  Eigen::MatrixXd table(scores.size(), 3);
  double cum = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    cum += scores(i);
    table.row(i) << data.times[n_train + i], scores(i), cum;
  }
  json fcj;
  fcj["n_train"] = n_train;
  fcj["steps"] = scores.size();
  fcj["total"] = cum;
  fcj["mean"] = scores.size() ? json(cum / static_cast<double>(scores.size())) : json(nullptr);
  r.j["forecast"] = fcj;
  emit(in.out, "forecast.csv", matrix_csv(table, {"t", "score", "cumulative"}), r);
  sw.lap("write");
  finish(in.out, r, sw);
}

void run_similarity(const CommandInputs& in) {
  const RunConfig& c = in.config;
  prepare_out(in.out);
  Stopwatch sw;
  Report r("similarity", c);
  if (in.model_dir.empty()) throw ConfigError("similarity needs --model-dir");
  const SavedModel m = load_model(in.model_dir);
  if (!is_factor_model(m.kind)) throw ConfigError("similarity applies to factor models only");
  r.j["model"] = to_string(m.kind);
  r.j["k"] = m.factor.K();
  const Eigen::MatrixXd s = similarity_matrix(m.factor.B);
  sw.lap("similarity");
  emit(in.out, "similarity.csv", matrix_csv(s, m.names.size() == static_cast<size_t>(s.cols()) ? m.names
                                                                                                 : default_names(s.cols())),
       r);
  finish(in.out, r, sw);
}

void run_kl_compare(const CommandInputs& in) {
  const RunConfig& c = in.config;
  prepare_out(in.out);
  Stopwatch sw;
  Report r("kl-compare", c);
  if (in.truth_dir.empty() || in.model_dirs.empty()) {
    throw ConfigError("kl-compare needs --truth-dir (simulate output) and at least one --model-dir");
  }
  const Eigen::MatrixXd b = read_matrix_csv(in.truth_dir / "truth_B.csv");
  const Eigen::VectorXd sigma = read_matrix_csv(in.truth_dir / "truth_Sigma.csv").col(0);
  const Eigen::MatrixXd lam = read_matrix_csv(in.truth_dir / "truth_lambda.csv");
  const Eigen::Index k = b.cols();
  if (lam.cols() != 1 + k * k || sigma.size() != b.rows()) throw DataError("truth files disagree in size");
  std::vector<SavedModel> models;
  std::vector<std::string> header{"t"};
  for (size_t i = 0; i < in.model_dirs.size(); ++i) {
    models.push_back(load_model(in.model_dirs[i]));
    header.push_back("kl_" + std::to_string(i));
  }
  Eigen::MatrixXd table(lam.rows(), 1 + static_cast<Eigen::Index>(models.size()));
  for (Eigen::Index n = 0; n < lam.rows(); ++n) {
    const Eigen::MatrixXd l = Eigen::Map<const Eigen::MatrixXd>(lam.row(n).tail(k * k).eval().data(), k, k);
    Eigen::MatrixXd truth = b * l * b.transpose();
    truth.diagonal() += sigma;
    table(n, 0) = lam(n, 0);
    for (size_t i = 0; i < models.size(); ++i) {
      // EWMA models are indexed by position.
      const double at = models[i].kind == ModelKind::kEwma ? static_cast<double>(n + 1) : lam(n, 0);
      table(n, static_cast<Eigen::Index>(i) + 1) = kl_gaussian(truth, models[i].covariance(at));
    }
  }
  sw.lap("kl");
  json kj = json::array();
  for (size_t i = 0; i < models.size(); ++i) {
    kj.push_back({{"column", header[i + 1]},
                  {"model_dir", in.model_dirs[i].string()},
                  {"model", to_string(models[i].kind)},
                  {"mean", table.col(static_cast<Eigen::Index>(i) + 1).mean()}});
  }
  r.j["kl"] = kj;
  emit(in.out, "plotdata_kl.csv", matrix_csv(table, header), r);
  finish(in.out, r, sw);
}

}  // namespace tvfactor::app
