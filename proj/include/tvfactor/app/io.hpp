#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "tvfactor/em_spatiotemporal.hpp"
#include "tvfactor/errors.hpp"
#include "tvfactor/model_core.hpp"

namespace tvfactor::app {

/// Unreadable or unwritable file. Reported like a data error.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

enum class Layout { kWide, kLong };

struct Dataset {
  TimePoints times;
  Eigen::MatrixXd obs;  // wide: N x Q
  std::vector<std::string> names;
  // Long layout only.
  Panel panel;  // N matrices Q x P
  std::vector<std::string> p_labels;
  std::vector<std::string> q_labels;
  std::vector<std::string> warnings;

  Layout layout() const { return panel.empty() ? Layout::kWide : Layout::kLong; }
};

/// Header `t,<name1>,...`; rows sorted by t if needed (with a warning), duplicate t rejected.
Dataset read_wide(const std::filesystem::path& path);

/// Header `t,p,q,value`; every (t, p, q) cell must be present. Labels keep first-seen order.
/// obs is filled with the Q x P panel flattened column-major (P = 1 gives the wide layout).
Dataset read_long(const std::filesystem::path& path);

Dataset read_dataset(const std::filesystem::path& path, Layout layout);

/// r_t = log(s_t / s_{t-1}) per column; drops the first time point. Prices must be positive.
Dataset log_returns(const Dataset& prices);

/// Clamp each column to mean +/- k sd, with mean and sd from rows [0, rows).
void trim_outliers(Dataset& data, double k, Eigen::Index rows);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

/// Write to a temporary file next to path, then rename over it.
void write_atomic(const std::filesystem::path& path, const std::string& content);

/// Plain numeric CSV with a header row (col0, col1, ... when names is empty).
std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names = {});

/// Wide data file: t column then one column per name.
std::string wide_csv(const Eigen::VectorXd& t, const Eigen::MatrixXd& obs,
                     const std::vector<std::string>& names);

/// Reads a file written by matrix_csv.
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

}  // namespace tvfactor::app
