#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tvfactor/app/config.hpp"
#include "tvfactor/baselines.hpp"
#include "tvfactor/em_spatiotemporal.hpp"

namespace tvfactor::app {

struct CommandInputs {
  RunConfig config;
  std::filesystem::path data;       // fit, select, forecast
  std::filesystem::path out;        // every command
  std::filesystem::path model_dir;  // identify, similarity
  std::filesystem::path truth_dir;  // kl-compare
  std::vector<std::filesystem::path> model_dirs;  // kl-compare
};

/// A fitted model as stored in model.json.
struct SavedModel {
  ModelKind kind = ModelKind::kGhefm;
  Family family;
  FactorModelParams factor;                  // factor models
  std::optional<SpatioTemporalParams> st;    // st-a, st-b
  std::optional<EwmaModel> ewma;             // ewma
  std::optional<NonFactorModel> nonfactor;   // nonfactor
  std::vector<std::string> names;

  /// Covariance of one observation vector at t (EWMA: t is the series position).
  Eigen::MatrixXd covariance(double t) const;
};

std::string model_json(const SavedModel& m);
SavedModel load_model(const std::filesystem::path& dir);

void run_simulate(const CommandInputs& in);
void run_fit(const CommandInputs& in);
void run_select(const CommandInputs& in);
void run_identify(const CommandInputs& in);
void run_forecast(const CommandInputs& in);
void run_similarity(const CommandInputs& in);
void run_kl_compare(const CommandInputs& in);

}  // namespace tvfactor::app
