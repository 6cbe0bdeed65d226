// Command-line front end: tvfactor <command> [options].

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tvfactor/app/commands.hpp"
#include "tvfactor/errors.hpp"

namespace {

using tvfactor::app::CommandInputs;
using tvfactor::app::RunConfig;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void add_common(CLI::App* sc, CommandInputs& in, std::string& config_file) {
  sc->add_option("--config", config_file, "JSON file of option values (keys are option names; flags override)")
      ->check(CLI::ExistingFile);
  sc->add_option("--out", in.out, "Output directory (created if missing)")->required();
  sc->add_option("--seed", in.config.seed, "Global seed; every stochastic stage derives its own stream");
}

void add_data(CLI::App* sc, CommandInputs& in) {
  RunConfig& c = in.config;
  sc->add_option("--data", in.data, "Input CSV: wide `t,<names...>` or long `t,p,q,value`");
  sc->add_option("--layout", c.layout, "Input layout")->check(CLI::IsMember({"wide", "long"}));
  sc->add_flag("--log-returns", c.log_returns, "Convert prices to log returns first");
  sc->add_option("--trim-k", c.trim_k, "Clamp each column to mean +/- k sd (0: off; 3 is customary)");
}

void add_model(CLI::App* sc, CommandInputs& in, bool multi_k) {
  RunConfig& c = in.config;
  sc->add_option("--model", c.model, "ghofm, ghefm, rhofm, rhefm, st-a, st-b, ewma or nonfactor");
  sc->add_option("--k", c.k, multi_k ? "Candidate factor counts, e.g. 1-12 or 1,3,5" : "Factor count");
  sc->add_option("--kp", c.kp, "Spatial factor count (st-a, st-b)");
  sc->add_option("--bandwidth", c.bandwidth, "`auto` (default grid) or comma-separated bandwidths");
  sc->add_flag("--static-bandwidth", c.static_bandwidth, "Fit each grid bandwidth separately instead of re-selecting inside EM");
  sc->add_option("--centers", c.centers, "Basis centers: 0 uses the observed times, else that many evenly spaced");
  sc->add_option("--nu", c.nu, "Student-t degrees of freedom (rhofm, rhefm)");
  sc->add_option("--regularization", c.regularization, "free, diagonal or iw");
  sc->add_option("--iw-zeta", c.iw_zeta, "Inverse-Wishart zeta (default: zeta + K + 1 = 1e-8)");
  sc->add_option("--iw-theta", c.iw_theta, "Inverse-Wishart scale, Theta = value * I");
  sc->add_flag("--tv-sigma", c.tv_sigma, "Time-varying idiosyncratic variances");
  sc->add_option("--max-iter", c.max_iter, "EM iteration limit");
  sc->add_option("--rel-tol", c.rel_tol, "Stop when the objective changes by less than this, relatively");
  sc->add_option("--ewma-alphas", c.ewma_alphas, "`default` or comma-separated EWMA decays");
}

void add_plot(CLI::App* sc, CommandInputs& in) {
  sc->add_option("--pairs", in.config.pairs, "Zero-based coordinate pairs for correlation plot data");
  sc->add_option("--grid-points", in.config.grid_points, "Time grid size for plot data");
}

void apply_config_file(CLI::App* sc, const std::string& path, CommandInputs& in) {
  for (const auto& [flag, values] : tvfactor::app::read_config_file(path)) {
    if (flag == "config" || flag == "out") throw tvfactor::ConfigError("'" + flag + "' cannot be set in a config file");
    CLI::Option* opt = sc->get_option_no_throw("--" + flag);
    if (opt == nullptr) throw tvfactor::ConfigError(path + ": unknown key '" + flag + "' for " + sc->get_name());
    if (opt->count() > 0) continue;  // command line wins
    for (const auto& v : values) opt->add_result(v);
    opt->run_callback();
  }
  if (sc->get_option_no_throw("--iw-zeta") != nullptr && sc->get_option("--iw-zeta")->count() > 0) {
    in.config.iw_zeta_set = true;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-varying covariance estimation with heteroscedastic factor models"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  CommandInputs in;
  std::string config_file;

  CLI::App* sim = app.add_subcommand("simulate", "Draw a synthetic data set with a known factor structure");
  add_common(sim, in, config_file);
  sim->add_option("--n", in.config.sim_n, "Time points");
  sim->add_option("--q", in.config.sim_q, "Observed dimension");
  sim->add_option("--k", in.config.sim_k, "Factor count");
  sim->add_option("--gamma", in.config.sim_gamma, "Factor smoothness: kernel exp(-0.5 10^-gamma dt^2)");
  sim->add_option("--s2", in.config.sim_s2, "Noise scale: variances ~ U(0.5 s2, 1.5 s2)");
  sim->add_option("--family", in.config.sim_family, "gaussian or t")->check(CLI::IsMember({"gaussian", "t"}));
  sim->add_option("--nu", in.config.nu, "Degrees of freedom for t noise");

  CLI::App* fit = app.add_subcommand("fit", "Fit one model with a fixed factor count");
  add_common(fit, in, config_file);
  add_data(fit, in);
  add_model(fit, in, false);
  add_plot(fit, in);

  CLI::App* sel = app.add_subcommand("select", "Choose the factor count (and bandwidth) by cross-validation");
  add_common(sel, in, config_file);
  add_data(sel, in);
  add_model(sel, in, true);
  add_plot(sel, in);
  sel->add_option("--split-mode", in.config.split_mode, "random or blockwise");
  sel->add_option("--split-ratio", in.config.split_ratio, "Validation fraction per split");
  sel->add_option("--split-count", in.config.split_count, "Number of splits");

  CLI::App* idn = app.add_subcommand("identify", "Orthonormalize and sparsify a fitted factor model");
  add_common(idn, in, config_file);
  idn->add_option("--model-dir", in.model_dir, "Output directory of fit or select")->required();
  add_plot(idn, in);

  CLI::App* fc = app.add_subcommand("forecast", "One-step-ahead predictive scores on a held-out tail");
  add_common(fc, in, config_file);
  add_data(fc, in);
  add_model(fc, in, false);
  fc->add_option("--train", in.config.train, "Training rows (0: use --train-fraction)");
  fc->add_option("--train-fraction", in.config.train_fraction, "Training share of the series");

  CLI::App* simil = app.add_subcommand("similarity", "Cosine similarities between loading rows");
  add_common(simil, in, config_file);
  simil->add_option("--model-dir", in.model_dir, "Output directory of fit, select or identify")->required();

  CLI::App* kl = app.add_subcommand("kl-compare", "KL divergence from a simulated truth to fitted models");
  add_common(kl, in, config_file);
  kl->add_option("--truth-dir", in.truth_dir, "Output directory of simulate")->required();
  kl->add_option("--model-dir", in.model_dirs, "Model output directories (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  CLI::App* sc = app.get_subcommands().front();
  try {
    if (!config_file.empty()) {
      apply_config_file(sc, config_file, in);
    } else if (sc->get_option_no_throw("--iw-zeta") != nullptr && sc->get_option("--iw-zeta")->count() > 0) {
      in.config.iw_zeta_set = true;
    }
    const std::string name = sc->get_name();
    if (name == "simulate") tvfactor::app::run_simulate(in);
    if (name == "fit") tvfactor::app::run_fit(in);
    if (name == "select") tvfactor::app::run_select(in);
    if (name == "identify") tvfactor::app::run_identify(in);
    if (name == "forecast") tvfactor::app::run_forecast(in);
    if (name == "similarity") tvfactor::app::run_similarity(in);
    if (name == "kl-compare") tvfactor::app::run_kl_compare(in);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const tvfactor::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const tvfactor::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const tvfactor::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
