#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmix {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Smallest value a factor entry may take after a multiplicative update.
inline constexpr double kFactorFloor = 1e-16;
// Lower clip applied to detection probabilities at entries with y > 0.
inline constexpr double kDetectionFloor = 1e-9;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line = -1, long column = -1)
      : std::runtime_error(Locate(what, line, column)), line_(line), column_(column) {}

  long line() const { return line_; }
  long column() const { return column_; }

 private:
  static std::string Locate(const std::string& what, long line, long column) {
    if (line < 0) return what;
    std::string loc = "line " + std::to_string(line);
    if (column >= 0) loc += ", column " + std::to_string(column);
    return loc + ": " + what;
  }

  long line_;
  long column_;
};

// Raised when an objective or iterate becomes non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One observed (row, col) position, 0-based.
struct Position {
  Index row = 0;
  Index col = 0;

  friend bool operator==(const Position&, const Position&) = default;
  friend auto operator<=>(const Position&, const Position&) = default;
};

/// Observed interaction counts over an I x J bipartite network.
///
/// `observed(i, j)` is true when an observation was made for the pair. Counts at
/// unobserved positions are stored as 0 and are never read by consumers.
struct CountDataset {
  CountMatrix counts;
  MaskMatrix observed;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;

  Index rows() const { return counts.rows(); }
  Index cols() const { return counts.cols(); }
  Index n_observed() const { return observed.count(); }

  // Fully observed dataset from a dense count matrix.
  static CountDataset FullyObserved(const CountMatrix& y) {
    CountDataset d;
    d.counts = y;
    d.observed = MaskMatrix::Constant(y.rows(), y.cols(), true);
    return d;
  }

  void Validate() const {
    if (counts.rows() < 1 || counts.cols() < 1)
      throw std::invalid_argument("count matrix must be non-empty");
    if (observed.rows() != counts.rows() || observed.cols() != counts.cols())
      throw std::invalid_argument("observed mask shape does not match counts");
    if (n_observed() == 0) throw std::invalid_argument("no observed entries");
    for (Index j = 0; j < cols(); ++j)
      for (Index i = 0; i < rows(); ++i)
        if (observed(i, j) && counts(i, j) < 0)
          throw std::invalid_argument("negative count at observed position");
  }

  // Observed counts as doubles with unobserved positions zeroed.
  Matrix ObservedCountsAsDouble() const {
    Matrix y = Matrix::Zero(rows(), cols());
    for (Index j = 0; j < cols(); ++j)
      for (Index i = 0; i < rows(); ++i)
        if (observed(i, j)) y(i, j) = static_cast<double>(counts(i, j));
    return y;
  }

  // Observed positions in column-major order (the design-matrix row order).
  std::vector<Position> ObservedPositions() const {
    std::vector<Position> out;
    out.reserve(static_cast<std::size_t>(n_observed()));
    for (Index j = 0; j < cols(); ++j)
      for (Index i = 0; i < rows(); ++i)
        if (observed(i, j)) out.push_back({i, j});
    return out;
  }
};

struct LatentCounts {
  CountMatrix counts;
};

/// Nonnegative latent factors; rate(i, j) = u.row(i) . v.row(j).
struct FactorModel {
  Matrix u;  // I x F
  Matrix v;  // J x F

  Index rank() const { return u.cols(); }
  Matrix Rates() const { return u * v.transpose(); }
  double Rate(Index i, Index j) const { return u.row(i).dot(v.row(j)); }
};

/// Per-pair detection features. Row (j * I + i) holds z^(ij), i.e. column-major over (i, j).
struct FeatureSet {
  Matrix z;
  Index n_rows = 0;
  Index n_cols = 0;

  Index n_features() const { return z.cols(); }
  static Index RowOf(Index i, Index j, Index n_rows) { return j * n_rows + i; }
  Index RowOf(Index i, Index j) const { return RowOf(i, j, n_rows); }

  // z with every feature equal to one: R = 1, p = alpha[0] everywhere.
  static FeatureSet Constant(Index rows, Index cols) {
    return FeatureSet{Matrix::Ones(rows * cols, 1), rows, cols};
  }

  void Validate() const {
    if (z.rows() != n_rows * n_cols)
      throw std::invalid_argument("feature matrix must have I*J rows");
    if (z.cols() < 1) throw std::invalid_argument("feature matrix needs at least one column");
    if (!z.allFinite()) throw std::invalid_argument("feature matrix has non-finite entries");
  }
};

struct DetectionModel {
  Vector alpha;
  Matrix p;  // I x J
};

// Detection probabilities clip_[0,1](z^(ij) . alpha) for every pair.
inline Matrix DetectionFromAlpha(const FeatureSet& features, const Vector& alpha) {
  if (features.n_features() != alpha.size())
    throw std::invalid_argument("alpha length does not match feature count");
  const Vector zp = features.z * alpha;
  Matrix p(features.n_rows, features.n_cols);
  for (Index j = 0; j < features.n_cols; ++j)
    for (Index i = 0; i < features.n_rows; ++i)
      p(i, j) = std::clamp(zp(features.RowOf(i, j)), 0.0, 1.0);
  return p;
}

struct FitConfig {
  Index rank = 1;
  double rho = 1.0;
  int max_outer = 500;
  double outer_tol = 1e-6;
  int admm_max_iter = 200;
  double admm_tol = 1e-6;
  double epsilon = 1e-12;
  std::uint64_t seed = 0;
  bool impute_missing = false;
  // When set, the detection block is skipped and alpha is held at this value.
  std::optional<Vector> fixed_alpha;

  void Validate() const {
    if (rank < 1) throw std::invalid_argument("rank must be >= 1");
    if (!(rho > 0)) throw std::invalid_argument("rho must be > 0");
    if (max_outer < 0) throw std::invalid_argument("max_outer must be >= 0");
    if (!(outer_tol > 0)) throw std::invalid_argument("outer_tol must be > 0");
    if (admm_max_iter < 1) throw std::invalid_argument("admm_max_iter must be >= 1");
    if (!(admm_tol > 0)) throw std::invalid_argument("admm_tol must be > 0");
    if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  }
};

}  // namespace nmix
