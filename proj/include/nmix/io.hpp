#pragma once

#include "nmix/fitter.hpp"
#include "nmix/types.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <vector>

namespace nmix {

/// Shortest decimal form that parses back to the same double. NaN is written as NA.
inline std::string FormatDouble(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void WriteFileAtomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace csv {

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits one CSV line; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> SplitLine(std::string_view line, long line_no) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && Trim(cur).empty()) {
      quoted = true;
      was_quoted = true;
      cur.clear();
    } else if (c == ',') {
      cells.push_back(was_quoted ? cur : std::string(Trim(cur)));
      cur.clear();
      was_quoted = false;
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  cells.push_back(was_quoted ? cur : std::string(Trim(cur)));
  return cells;
}

// Non-empty lines with their 1-based line numbers.
inline std::vector<std::pair<long, std::vector<std::string>>> ReadRows(const std::filesystem::path& path) {
  const std::string text = ReadFile(path);
  std::vector<std::pair<long, std::vector<std::string>>> rows;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    rows.emplace_back(line_no, SplitLine(line, line_no));
  }
  return rows;
}

inline bool ParseInt(std::string_view s, std::int64_t& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

inline bool ParseDouble(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty() && std::isfinite(out);
}

inline std::string Quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace csv

/// Parses a counts CSV: the first row holds column identifiers, the first column row
/// identifiers, and each cell is a nonnegative integer or NA (no observation made).
inline CountDataset load_counts(const std::filesystem::path& path) {
  const auto rows = csv::ReadRows(path);
  if (rows.empty()) throw ParseError("counts file " + path.string() + " is empty");
  const auto& header = rows.front().second;
  if (header.size() < 2) throw ParseError("counts header needs at least one column identifier", rows.front().first);

  CountDataset data;
  std::set<std::string> seen_cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (!seen_cols.insert(header[c]).second)
      throw ParseError("duplicate column identifier '" + header[c] + "'", rows.front().first, static_cast<long>(c + 1));
    data.col_labels.push_back(header[c]);
  }
  const auto n_rows = static_cast<Index>(rows.size() - 1);
  const auto n_cols = static_cast<Index>(header.size() - 1);
  if (n_rows == 0) throw ParseError("counts file has no data rows", rows.front().first);

  data.counts = CountMatrix::Zero(n_rows, n_cols);
  data.observed = MaskMatrix::Constant(n_rows, n_cols, false);
  std::set<std::string> seen_rows;
  for (Index i = 0; i < n_rows; ++i) {
    const auto& [line_no, cells] = rows[static_cast<std::size_t>(i + 1)];
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()), line_no);
    if (!seen_rows.insert(cells[0]).second)
      throw ParseError("duplicate row identifier '" + cells[0] + "'", line_no, 1);
    data.row_labels.push_back(cells[0]);
    for (Index j = 0; j < n_cols; ++j) {
      const std::string& cell = cells[static_cast<std::size_t>(j + 1)];
      const long col_no = static_cast<long>(j + 2);
      if (cell == "NA") continue;
      std::int64_t value = 0;
      if (!csv::ParseInt(cell, value))
        throw ParseError("cell '" + cell + "' is neither an integer nor NA", line_no, col_no);
      if (value < 0) throw ParseError("negative count " + cell, line_no, col_no);
      data.counts(i, j) = value;
      data.observed(i, j) = true;
    }
  }
  if (data.n_observed() == 0) throw std::invalid_argument("counts file has no observed entries");
  return data;
}

/// Parses a features CSV with header row,col,z1..zR and 1-based indices. Pairs absent from
/// the file get zero features; an absent pair that is observed is an error.
inline FeatureSet load_features(const std::filesystem::path& path, Index n_rows, Index n_cols,
                                const MaskMatrix& observed) {
  if (observed.rows() != n_rows || observed.cols() != n_cols)
    throw std::invalid_argument("observed mask shape does not match the requested dimensions");
  const auto rows = csv::ReadRows(path);
  if (rows.empty()) throw ParseError("features file " + path.string() + " is empty");
  const auto& header = rows.front().second;
  if (header.size() < 3 || header[0] != "row" || header[1] != "col")
    throw ParseError("features header must be row,col,z1..zR", rows.front().first);
  const auto n_features = static_cast<Index>(header.size() - 2);

  FeatureSet fs{Matrix::Zero(n_rows * n_cols, n_features), n_rows, n_cols};
  MaskMatrix present = MaskMatrix::Constant(n_rows, n_cols, false);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [line_no, cells] = rows[r];
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()), line_no);
    std::int64_t i1 = 0, j1 = 0;
    if (!csv::ParseInt(cells[0], i1)) throw ParseError("row index '" + cells[0] + "' is not an integer", line_no, 1);
    if (!csv::ParseInt(cells[1], j1)) throw ParseError("col index '" + cells[1] + "' is not an integer", line_no, 2);
    if (i1 < 1 || i1 > n_rows) throw ParseError("row index " + cells[0] + " out of range", line_no, 1);
    if (j1 < 1 || j1 > n_cols) throw ParseError("col index " + cells[1] + " out of range", line_no, 2);
    const Index i = i1 - 1, j = j1 - 1;
    if (present(i, j))
      throw ParseError("duplicate pair (" + cells[0] + ", " + cells[1] + ")", line_no);
    present(i, j) = true;
    for (Index k = 0; k < n_features; ++k) {
      double value = 0.0;
      const std::string& cell = cells[static_cast<std::size_t>(k + 2)];
      if (!csv::ParseDouble(cell, value))
        throw ParseError("feature '" + cell + "' is not a finite number", line_no, static_cast<long>(k + 3));
      fs.z(fs.RowOf(i, j), k) = value;
    }
  }
  for (Index j = 0; j < n_cols; ++j)
    for (Index i = 0; i < n_rows; ++i)
      if (observed(i, j) && !present(i, j))
        throw ParseError("observed pair (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                         ") has no features in " + path.string());
  return fs;
}

inline std::string CountsToCsv(const CountDataset& data) {
  std::string out;
  for (Index j = 0; j < data.cols(); ++j) {
    out += ',';
    out += data.col_labels.empty() ? "c" + std::to_string(j + 1)
                                   : csv::Quote(data.col_labels[static_cast<std::size_t>(j)]);
  }
  out += '\n';
  for (Index i = 0; i < data.rows(); ++i) {
    out += data.row_labels.empty() ? "r" + std::to_string(i + 1)
                                   : csv::Quote(data.row_labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < data.cols(); ++j) {
      out += ',';
      out += data.observed(i, j) ? std::to_string(data.counts(i, j)) : "NA";
    }
    out += '\n';
  }
  return out;
}

inline std::string FeaturesToCsv(const FeatureSet& fs) {
  std::string out = "row,col";
  for (Index k = 0; k < fs.n_features(); ++k) out += ",z" + std::to_string(k + 1);
  out += '\n';
  for (Index i = 0; i < fs.n_rows; ++i)
    for (Index j = 0; j < fs.n_cols; ++j) {
      out += std::to_string(i + 1) + "," + std::to_string(j + 1);
      for (Index k = 0; k < fs.n_features(); ++k) out += "," + FormatDouble(fs.z(fs.RowOf(i, j), k));
      out += '\n';
    }
  return out;
}

// Headerless numeric matrix, one line per row.
inline std::string MatrixToCsv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += FormatDouble(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Matrix load_matrix_csv(const std::filesystem::path& path) {
  const auto rows = csv::ReadRows(path);
  if (rows.empty()) throw ParseError("matrix file " + path.string() + " is empty");
  const std::size_t width = rows.front().second.size();
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& [line_no, cells] = rows[r];
    if (cells.size() != width)
      throw ParseError("expected " + std::to_string(width) + " cells, found " + std::to_string(cells.size()), line_no);
    for (std::size_t c = 0; c < width; ++c) {
      double value = 0.0;
      if (!csv::ParseDouble(cells[c], value))
        throw ParseError("'" + cells[c] + "' is not a finite number", line_no, static_cast<long>(c + 1));
      m(static_cast<Index>(r), static_cast<Index>(c)) = value;
    }
  }
  return m;
}

/// Persisted fit: factors, detection weights, fitted detection probabilities, the
/// configuration used and the objective trace.
struct ModelFile {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  FactorModel factors;
  Vector alpha;
  Matrix p_hat;  // I x J, clip(Z alpha)
  FitConfig config;
  std::vector<double> objective_trace;
  bool converged = false;
  int n_outer = 0;

  Index rows() const { return factors.u.rows(); }
  Index cols() const { return factors.v.rows(); }
  Matrix LambdaHat() const { return factors.Rates(); }
  Matrix PredictCounts() const { return p_hat.cwiseProduct(LambdaHat()); }
};

namespace detail {

inline nlohmann::json RowMajor(const Matrix& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  return arr;
}

inline Matrix FromRowMajor(const nlohmann::json& arr, Index rows, Index cols, const char* name) {
  if (!arr.is_array() || static_cast<Index>(arr.size()) != rows * cols)
    throw ParseError(std::string("model field '") + name + "' has the wrong length");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = arr.at(static_cast<std::size_t>(i * cols + j)).get<double>();
  return m;
}

}  // namespace detail

inline std::string ModelToJson(const ModelFile& model) {
  using nlohmann::json;
  const Index f = model.factors.rank();
  json cfg = {{"rank", model.config.rank},
              {"rho", model.config.rho},
              {"max_outer", model.config.max_outer},
              {"outer_tol", model.config.outer_tol},
              {"admm_max_iter", model.config.admm_max_iter},
              {"admm_tol", model.config.admm_tol},
              {"epsilon", model.config.epsilon},
              {"seed", model.config.seed},
              {"impute_missing", model.config.impute_missing}};
  cfg["fixed_alpha"] = model.config.fixed_alpha
                           ? detail::RowMajor(Matrix(*model.config.fixed_alpha))
                           : json(nullptr);
  json j = {{"format_version", model.format_version},
            {"I", model.rows()},
            {"J", model.cols()},
            {"F", f},
            {"R", model.alpha.size()},
            {"u", detail::RowMajor(model.factors.u)},
            {"v", detail::RowMajor(model.factors.v)},
            {"alpha", detail::RowMajor(Matrix(model.alpha))},
            {"p_hat", detail::RowMajor(model.p_hat)},
            {"config", cfg},
            {"objective_trace", model.objective_trace},
            {"converged", model.converged},
            {"n_outer", model.n_outer}};
  return j.dump(2) + "\n";
}

inline ModelFile ModelFromJson(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    ModelFile m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != ModelFile::kFormatVersion)
      throw ParseError("unsupported model format_version " + std::to_string(m.format_version));
    const auto rows = j.at("I").get<Index>();
    const auto cols = j.at("J").get<Index>();
    const auto rank = j.at("F").get<Index>();
    const auto n_features = j.at("R").get<Index>();
    if (rows < 1 || cols < 1 || rank < 1 || n_features < 1) throw ParseError("model dimensions must be positive");
    m.factors.u = detail::FromRowMajor(j.at("u"), rows, rank, "u");
    m.factors.v = detail::FromRowMajor(j.at("v"), cols, rank, "v");
    m.alpha = detail::FromRowMajor(j.at("alpha"), n_features, 1, "alpha").col(0);
    m.p_hat = detail::FromRowMajor(j.at("p_hat"), rows, cols, "p_hat");
    const json& cfg = j.at("config");
    m.config.rank = cfg.at("rank").get<Index>();
    m.config.rho = cfg.at("rho").get<double>();
    m.config.max_outer = cfg.at("max_outer").get<int>();
    m.config.outer_tol = cfg.at("outer_tol").get<double>();
    m.config.admm_max_iter = cfg.at("admm_max_iter").get<int>();
    m.config.admm_tol = cfg.at("admm_tol").get<double>();
    m.config.epsilon = cfg.at("epsilon").get<double>();
    m.config.seed = cfg.at("seed").get<std::uint64_t>();
    m.config.impute_missing = cfg.at("impute_missing").get<bool>();
    if (!cfg.at("fixed_alpha").is_null()) {
      const json& fa = cfg.at("fixed_alpha");
      m.config.fixed_alpha = detail::FromRowMajor(fa, static_cast<Index>(fa.size()), 1, "fixed_alpha").col(0);
    }
    m.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    m.converged = j.at("converged").get<bool>();
    m.n_outer = j.at("n_outer").get<int>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

inline ModelFile MakeModelFile(const FitResult& fit_result, const FeatureSet& features) {
  ModelFile m;
  m.factors = fit_result.factors;
  m.alpha = fit_result.detection.alpha;
  m.p_hat = DetectionFromAlpha(features, fit_result.detection.alpha);
  m.config = fit_result.config_echo;
  m.objective_trace = fit_result.objective_trace;
  m.converged = fit_result.converged;
  m.n_outer = fit_result.n_outer;
  return m;
}

inline void save_model(const std::filesystem::path& path, const ModelFile& model) {
  WriteFileAtomic(path, ModelToJson(model));
}

inline ModelFile load_model(const std::filesystem::path& path) { return ModelFromJson(ReadFile(path)); }

}  // namespace nmix
