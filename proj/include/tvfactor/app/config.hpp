#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tvfactor/app/io.hpp"
#include "tvfactor/model_core.hpp"
#include "tvfactor/model_selection.hpp"

namespace tvfactor::app {

enum class ModelKind { kGhofm, kGhefm, kRhofm, kRhefm, kStA, kStB, kEwma, kNonfactor };

ModelKind parse_model(const std::string& s);
std::string to_string(ModelKind m);
bool is_factor_model(ModelKind m);  // ghofm, ghefm, rhofm, rhefm
bool is_robust(ModelKind m);
bool is_heteroscedastic(ModelKind m);

/// "1-12", "3", "1,2,5" or mixtures such as "1-3,8".
std::vector<Eigen::Index> parse_k_list(const std::string& s);

/// "auto" or a comma-separated list of positive bandwidths.
std::vector<double> parse_bandwidths(const std::string& s);

/// "0-1,2-5": zero-based coordinate pairs.
std::vector<std::pair<Eigen::Index, Eigen::Index>> parse_pairs(const std::string& s);

struct RunConfig {
  std::string model = "ghefm";
  std::string k = "1-10";
  int kp = 1;  // spatial factors (spatiotemporal models)
  std::string bandwidth = "auto";
  bool static_bandwidth = false;  // fit each grid value separately instead of re-selecting inside EM
  int centers = 0;                // 0: the observed times; otherwise that many evenly spaced centers
  std::string split_mode = "random";
  double split_ratio = 0.1;
  int split_count = 12;
  double nu = 6.0;
  std::string regularization = "free";  // free, diagonal, iw
  double iw_zeta = 0.0;                 // used when iw_zeta_set
  bool iw_zeta_set = false;
  double iw_theta = 1e-8;  // Theta = iw_theta * I
  bool tv_sigma = false;
  double trim_k = 0.0;  // 0: off
  bool log_returns = false;
  std::string layout = "wide";
  std::uint64_t seed = 0;
  int max_iter = 500;
  double rel_tol = 1e-6;
  int train = 0;  // forecast: training rows; 0 uses train_fraction
  double train_fraction = 0.8;
  std::string ewma_alphas = "default";  // or a comma-separated list
  std::string pairs = "0-1";
  int grid_points = 200;
  // simulate
  int sim_n = 300;
  int sim_q = 130;
  int sim_k = 5;
  double sim_gamma = 3.0;
  double sim_s2 = 1.0;
  std::string sim_family = "gaussian";  // gaussian or t (uses nu)

  void validate() const;

  ModelKind model_kind() const { return parse_model(model); }
  Layout layout_kind() const;
  RegularizationConfig regularization_config() const;
  FitConfig fit_config() const;
  SplitPlan split_plan() const;
  std::vector<double> alpha_grid() const;
};

/// Fields of a JSON object, by key, as they would be passed on the command line.
std::vector<std::pair<std::string, std::vector<std::string>>> read_config_file(
    const std::filesystem::path& path);

}  // namespace tvfactor::app
