#include "tvfactor/app/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unistd.h>

namespace tvfactor::app {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

double parse_double(const std::string& s, const std::filesystem::path& path, size_t line) {
  const std::string v = trim(s);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": not a finite number: '" + v + "'");
  }
  return out;
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path,
                                                std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);  // BOM
  header = split_line(line);
  for (auto& h : header) h = trim(h);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    rows.push_back(split_line(line));
  }
  return rows;
}

}  // namespace

Dataset read_wide(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  if (header.size() < 2 || header[0] != "t") {
    throw DataError(path.string() + ": wide layout needs a header 't,<name1>,...'");
  }
  if (rows.empty()) throw DataError(path.string() + ": no data rows");
  const Eigen::Index q = static_cast<Eigen::Index>(header.size()) - 1;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd t(n);
  Eigen::MatrixXd y(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<size_t>(i)];
    const size_t line = static_cast<size_t>(i) + 2;
    if (static_cast<Eigen::Index>(r.size()) != q + 1) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": expected " +
                      std::to_string(q + 1) + " cells, found " + std::to_string(r.size()));
    }
    t(i) = parse_double(r[0], path, line);
    for (Eigen::Index j = 0; j < q; ++j) y(i, j) = parse_double(r[static_cast<size_t>(j) + 1], path, line);
  }
  Dataset d;
  d.names.assign(header.begin() + 1, header.end());
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (!std::is_sorted(t.data(), t.data() + n)) {
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return t(a) < t(b); });
    d.warnings.push_back(path.string() + ": rows were not ordered by t and have been sorted");
  }
  Eigen::VectorXd ts(n);
  d.obs.resize(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    ts(i) = t(order[static_cast<size_t>(i)]);
    d.obs.row(i) = y.row(order[static_cast<size_t>(i)]);
    if (i > 0 && ts(i) == ts(i - 1)) {
      throw DataError(path.string() + ": duplicate time t=" + format_double(ts(i)));
    }
  }
  d.times = TimePoints(ts);
  return d;
}

Dataset read_long(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  if (header != std::vector<std::string>{"t", "p", "q", "value"}) {
    throw DataError(path.string() + ": long layout needs the header 't,p,q,value'");
  }
  if (rows.empty()) throw DataError(path.string() + ": no data rows");
  std::map<std::string, size_t> p_idx;
  std::map<std::string, size_t> q_idx;
  Dataset d;
  std::vector<double> tvals;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 4) throw DataError(path.string() + ":" + std::to_string(i + 2) + ": expected 4 cells");
    tvals.push_back(parse_double(r[0], path, i + 2));
    const std::string p = trim(r[1]);
    const std::string q = trim(r[2]);
    if (p_idx.emplace(p, d.p_labels.size()).second) d.p_labels.push_back(p);
    if (q_idx.emplace(q, d.q_labels.size()).second) d.q_labels.push_back(q);
  }
  std::vector<double> uniq = tvals;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const size_t n = uniq.size();
  const size_t np = d.p_labels.size();
  const size_t nq = d.q_labels.size();
  d.panel.assign(n, Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(np),
                                              std::numeric_limits<double>::quiet_NaN()));
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const size_t ti = static_cast<size_t>(std::lower_bound(uniq.begin(), uniq.end(), tvals[i]) - uniq.begin());
    const Eigen::Index qi = static_cast<Eigen::Index>(q_idx[trim(r[2])]);
    const Eigen::Index pi = static_cast<Eigen::Index>(p_idx[trim(r[1])]);
    double& cell = d.panel[ti](qi, pi);
    if (!std::isnan(cell)) {
      throw DataError(path.string() + ":" + std::to_string(i + 2) + ": duplicate cell (t=" + trim(r[0]) +
                      ", p=" + trim(r[1]) + ", q=" + trim(r[2]) + ")");
    }
    cell = parse_double(r[3], path, i + 2);
  }
  std::vector<std::string> gaps;
  size_t missing = 0;
  for (size_t ti = 0; ti < n; ++ti) {
    for (size_t pi = 0; pi < np; ++pi) {
      for (size_t qi = 0; qi < nq; ++qi) {
        if (!std::isnan(d.panel[ti](static_cast<Eigen::Index>(qi), static_cast<Eigen::Index>(pi)))) continue;
        if (++missing <= 10) {
          gaps.push_back("(t=" + format_double(uniq[ti]) + ", p=" + d.p_labels[pi] + ", q=" + d.q_labels[qi] + ")");
        }
      }
    }
  }
  if (missing > 0) {
    std::string msg = path.string() + ": " + std::to_string(missing) + " missing cells:";
    for (const auto& g : gaps) msg += " " + g;
    if (missing > gaps.size()) msg += " ...";
    throw DataError(msg);
  }
  d.times = TimePoints(Eigen::Map<const Eigen::VectorXd>(uniq.data(), static_cast<Eigen::Index>(n)));
  d.obs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nq * np));
  for (size_t ti = 0; ti < n; ++ti) {
    d.obs.row(static_cast<Eigen::Index>(ti)) =
        Eigen::Map<const Eigen::RowVectorXd>(d.panel[ti].data(), d.panel[ti].size());
  }
  for (const auto& p : d.p_labels) {
    for (const auto& q : d.q_labels) d.names.push_back(p + ":" + q);
  }
  return d;
}

Dataset read_dataset(const std::filesystem::path& path, Layout layout) {
  return layout == Layout::kWide ? read_wide(path) : read_long(path);
}

Dataset log_returns(const Dataset& prices) {
  const Eigen::Index n = prices.obs.rows();
  if (n < 2) throw DataError("log returns need at least two time points");
  if ((prices.obs.array() <= 0.0).any()) throw DataError("log returns need positive prices");
  Dataset out = prices;
  const Eigen::ArrayXXd lg = prices.obs.array().log();
  out.obs = (lg.bottomRows(n - 1) - lg.topRows(n - 1)).matrix();
  out.times = TimePoints(prices.times.values().tail(n - 1));
  if (!prices.panel.empty()) {
    out.panel.clear();
    const Eigen::Index q = prices.panel.front().rows();
    const Eigen::Index p = prices.panel.front().cols();
    for (Eigen::Index i = 0; i < n - 1; ++i) {
      out.panel.push_back(Eigen::Map<const Eigen::MatrixXd>(out.obs.row(i).eval().data(), q, p));
    }
  }
  return out;
}

void trim_outliers(Dataset& data, double k, Eigen::Index rows) {
  if (!(k > 0.0)) throw ConfigError("trim multiplier must be positive");
  if (rows < 2 || rows > data.obs.rows()) throw ConfigError("trim window out of range");
  const Eigen::MatrixXd head = data.obs.topRows(rows);
  const Eigen::RowVectorXd mean = head.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((head.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(rows - 1)).sqrt();
  for (Eigen::Index j = 0; j < data.obs.cols(); ++j) {
    data.obs.col(j) = data.obs.col(j).cwiseMax(mean(j) - k * sd(j)).cwiseMin(mean(j) + k * sd(j));
  }
  if (!data.panel.empty()) {
    const Eigen::Index q = data.panel.front().rows();
    const Eigen::Index p = data.panel.front().cols();
    for (Eigen::Index i = 0; i < data.obs.rows(); ++i) {
      data.panel[static_cast<size_t>(i)] = Eigen::Map<const Eigen::MatrixXd>(data.obs.row(i).eval().data(), q, p);
    }
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place: " + path.string());
  }
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
  std::string s;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (j) s += ',';
    s += names.empty() ? "col" + std::to_string(j) : names[static_cast<size_t>(j)];
  }
  s += '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) s += ',';
      s += format_double(m(i, j));
    }
    s += '\n';
  }
  return s;
}

std::string wide_csv(const Eigen::VectorXd& t, const Eigen::MatrixXd& obs,
                     const std::vector<std::string>& names) {
  Eigen::MatrixXd m(obs.rows(), obs.cols() + 1);
  m << t, obs;
  std::vector<std::string> header{"t"};
  header.insert(header.end(), names.begin(), names.end());
  return matrix_csv(m, header);
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(i + 2) + ": ragged row");
    }
    for (size_t j = 0; j < header.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(rows[i][j], path, i + 2);
    }
  }
  return m;
}

}  // namespace tvfactor::app
