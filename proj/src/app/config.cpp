#include "tvfactor/app/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "tvfactor/baselines.hpp"
#include "tvfactor/errors.hpp"

namespace tvfactor::app {

namespace {

const std::vector<std::pair<ModelKind, std::string>> kModelNames = {
    {ModelKind::kGhofm, "ghofm"}, {ModelKind::kGhefm, "ghefm"}, {ModelKind::kRhofm, "rhofm"},
    {ModelKind::kRhefm, "rhefm"}, {ModelKind::kStA, "st-a"},    {ModelKind::kStB, "st-b"},
    {ModelKind::kEwma, "ewma"},   {ModelKind::kNonfactor, "nonfactor"}};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(s);
  while (std::getline(is, cell, sep)) {
    cell.erase(std::remove_if(cell.begin(), cell.end(), [](unsigned char c) { return std::isspace(c); }),
               cell.end());
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

long parse_int(const std::string& s, const std::string& what) {
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("bad " + what + ": '" + s + "'");
  return v;
}

double parse_real(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("bad " + what + ": '" + s + "'");
  }
  return v;
}

}  // namespace

ModelKind parse_model(const std::string& s) {
  for (const auto& [k, name] : kModelNames) {
    if (name == s) return k;
  }
  throw ConfigError("unknown model '" + s + "' (ghofm, ghefm, rhofm, rhefm, st-a, st-b, ewma, nonfactor)");
}

std::string to_string(ModelKind m) {
  for (const auto& [k, name] : kModelNames) {
    if (k == m) return name;
  }
  return "?";
}

bool is_factor_model(ModelKind m) {
  return m == ModelKind::kGhofm || m == ModelKind::kGhefm || m == ModelKind::kRhofm || m == ModelKind::kRhefm;
}
bool is_robust(ModelKind m) { return m == ModelKind::kRhofm || m == ModelKind::kRhefm; }
bool is_heteroscedastic(ModelKind m) { return m == ModelKind::kGhefm || m == ModelKind::kRhefm; }

std::vector<Eigen::Index> parse_k_list(const std::string& s) {
  std::vector<Eigen::Index> out;
  for (const std::string& part : split(s, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_int(part, "factor count"));
      continue;
    }
    const long a = parse_int(part.substr(0, dash), "factor range");
    const long b = parse_int(part.substr(dash + 1), "factor range");
    if (b < a) throw ConfigError("empty factor range '" + part + "'");
    for (long k = a; k <= b; ++k) out.push_back(k);
  }
  if (out.empty()) throw ConfigError("no factor counts given");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.front() < 1) throw ConfigError("factor counts must be positive");
  return out;
}

std::vector<double> parse_bandwidths(const std::string& s) {
  if (s == "auto") return {};
  std::vector<double> out;
  for (const std::string& part : split(s, ',')) {
    const double h = parse_real(part, "bandwidth");
    if (!(h > 0.0)) throw ConfigError("bandwidths must be positive");
    out.push_back(h);
  }
  if (out.empty()) throw ConfigError("empty bandwidth list");
  return out;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> parse_pairs(const std::string& s) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  for (const std::string& part : split(s, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) throw ConfigError("pairs look like '0-1,2-5'");
    const long a = parse_int(part.substr(0, dash), "pair");
    const long b = parse_int(part.substr(dash + 1), "pair");
    if (a < 0 || b < 0) throw ConfigError("pair indices are zero-based and non-negative");
    out.emplace_back(a, b);
  }
  return out;
}

Layout RunConfig::layout_kind() const {
  if (layout == "wide") return Layout::kWide;
  if (layout == "long") return Layout::kLong;
  throw ConfigError("layout must be 'wide' or 'long'");
}

void RunConfig::validate() const {
  const ModelKind m = model_kind();
  parse_k_list(k);
  parse_bandwidths(bandwidth);
  parse_pairs(pairs);
  layout_kind();
  if (kp < 1) throw ConfigError("kp must be positive");
  if (centers < 0) throw ConfigError("centers must be 0 (observed times) or a positive count");
  split_plan().validate();
  if (is_robust(m) && !(nu > 0.0)) throw ConfigError("nu must be positive");
  regularization_config();
  if (!(iw_theta > 0.0)) throw ConfigError("iw-theta must be positive");
  if (trim_k < 0.0) throw ConfigError("trim-k must be >= 0 (0 disables trimming)");
  if (max_iter < 1 || !(rel_tol > 0.0)) throw ConfigError("max-iter >= 1 and rel-tol > 0 required");
  if (train < 0) throw ConfigError("train must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train-fraction must lie in (0, 1)");
  alpha_grid();
  if (grid_points < 2) throw ConfigError("grid-points must be at least 2");
  if (sim_family != "gaussian" && sim_family != "t") throw ConfigError("sim-family must be gaussian or t");
  if ((m == ModelKind::kStA || m == ModelKind::kStB) && layout != "long") {
    throw ConfigError("spatiotemporal models need --layout long");
  }
}

RegularizationConfig RunConfig::regularization_config() const {
  RegularizationConfig r;
  if (regularization == "free") {
    r.mode = RegularizationConfig::Mode::kFree;
  } else if (regularization == "diagonal") {
    r.mode = RegularizationConfig::Mode::kDiagonal;
  } else if (regularization == "iw") {
    r.mode = RegularizationConfig::Mode::kInverseWishart;
    if (iw_zeta_set) r.zeta = iw_zeta;
    r.theta = Eigen::MatrixXd::Constant(1, 1, iw_theta);
  } else {
    throw ConfigError("regularization must be free, diagonal or iw");
  }
  return r;
}

FitConfig RunConfig::fit_config() const {
  FitConfig f;
  f.max_iter = max_iter;
  f.rel_tol = rel_tol;
  f.seed = seed;
  f.regularization = regularization_config();
  f.tv_sigma = tv_sigma;
  return f;
}

SplitPlan RunConfig::split_plan() const {
  SplitPlan p;
  if (split_mode == "random") {
    p.mode = SplitPlan::Mode::kRandom;
  } else if (split_mode == "blockwise") {
    p.mode = SplitPlan::Mode::kBlockwise;
  } else {
    throw ConfigError("split-mode must be random or blockwise");
  }
  p.ratio = split_ratio;
  p.count = split_count;
  p.seed = derive_seed(seed, "splits");
  return p;
}

std::vector<double> RunConfig::alpha_grid() const {
  if (ewma_alphas == "default") return default_ewma_alphas();
  std::vector<double> out;
  for (const std::string& part : split(ewma_alphas, ',')) {
    const double a = parse_real(part, "EWMA decay");
    if (a < 0.0 || a > 1.0) throw ConfigError("EWMA decays must lie in [0, 1]");
    out.push_back(a);
  }
  if (out.empty()) throw ConfigError("empty EWMA decay list");
  return out;
}

std::vector<std::pair<std::string, std::vector<std::string>>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  const auto scalar = [&](const std::string& key, const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number()) return format_double(v.get<double>());
    throw ConfigError(path.string() + ": unsupported value for '" + key + "'");
  };
  for (const auto& [key, v] : j.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    std::vector<std::string> vals;
    if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) joined += (joined.empty() ? "" : ",") + scalar(key, e);
      vals.push_back(joined);
    } else {
      vals.push_back(scalar(key, v));
    }
    out.emplace_back(flag, vals);
  }
  return out;
}

}  // namespace tvfactor::app
