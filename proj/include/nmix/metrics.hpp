#pragma once

#include "nmix/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace nmix {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian algorithm with
/// potentials, O(n^3)). Returns assignment[row] = column.
inline std::vector<Index> min_cost_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument("cost matrix must be square");
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual start.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(n + 1, 0.0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  for (Index r = 1; r <= n; ++r) {
    match[0] = r;
    Index c0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[c0] = true;
      const Index r0 = match[c0];
      double delta = inf;
      Index c1 = 0;
      for (Index c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost(r0 - 1, c - 1) - row_pot[r0] - col_pot[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = c0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          c1 = c;
        }
      }
      for (Index c = 0; c <= n; ++c) {
        if (used[c]) {
          row_pot[match[c]] += delta;
          col_pot[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      c0 = c1;
    } while (match[c0] != 0);
    do {
      const Index c1 = way[c0];
      match[c0] = match[c1];
      c0 = c1;
    } while (c0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index c = 1; c <= n; ++c) assignment[static_cast<std::size_t>(match[c] - 1)] = c - 1;
  return assignment;
}

enum class AlignMethod { kAuto, kExhaustive, kHungarian };

namespace detail {

inline Matrix NormalizeColumns(const Matrix& m) {
  Matrix out = m;
  for (Index c = 0; c < m.cols(); ++c) {
    const double norm = m.col(c).norm();
    if (!(norm > 0.0)) throw std::invalid_argument("factor column has zero norm");
    out.col(c) /= norm;
  }
  return out;
}

// (1/F) sum_f ||truth(:, perm[f]) - est(:, f)||^2, summed in f order.
inline double PermutedMse(const Matrix& truth, const Matrix& est, const std::vector<Index>& perm) {
  double total = 0.0;
  for (Index f = 0; f < est.cols(); ++f)
    total += (truth.col(perm[static_cast<std::size_t>(f)]) - est.col(f)).squaredNorm();
  return total / static_cast<double>(est.cols());
}

}  // namespace detail

/// Column-normalized MSE between factor matrices, minimized over column permutations.
/// kAuto searches all permutations for F <= 8 and uses the Hungarian method otherwise.
inline double factor_mse(const Matrix& truth, const Matrix& estimate,
                         AlignMethod method = AlignMethod::kAuto) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw std::invalid_argument("factor matrices must have the same shape");
  if (truth.cols() < 1) throw std::invalid_argument("factor matrices need at least one column");
  const Matrix a = detail::NormalizeColumns(truth);
  const Matrix b = detail::NormalizeColumns(estimate);
  const Index f = a.cols();
  if (method == AlignMethod::kAuto) method = f <= 8 ? AlignMethod::kExhaustive : AlignMethod::kHungarian;

  std::vector<Index> best(static_cast<std::size_t>(f));
  std::iota(best.begin(), best.end(), Index{0});
  if (method == AlignMethod::kExhaustive) {
    std::vector<Index> perm = best;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      const double cost = detail::PermutedMse(a, b, perm);
      if (cost < best_cost) {
        best_cost = cost;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // cost(estimate column, truth column)
    Matrix cost(f, f);
    for (Index e = 0; e < f; ++e)
      for (Index t = 0; t < f; ++t) cost(e, t) = (a.col(t) - b.col(e)).squaredNorm();
    best = min_cost_assignment(cost);
  }
  return detail::PermutedMse(a, b, best);
}

inline double alpha_mse(const Vector& truth, const Vector& estimate) {
  if (truth.size() != estimate.size()) throw std::invalid_argument("alpha lengths differ");
  if (truth.size() == 0) throw std::invalid_argument("alpha must be non-empty");
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

/// RMSE over masked entries divided by the mean of the truth over the same entries.
inline double rrmse(const Matrix& truth, const Matrix& pred, const MaskMatrix& mask) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols() || mask.rows() != truth.rows() ||
      mask.cols() != truth.cols())
    throw std::invalid_argument("rrmse inputs must share one shape");
  double sum_sq = 0.0;
  double sum = 0.0;
  long n = 0;
  for (Index j = 0; j < truth.cols(); ++j)
    for (Index i = 0; i < truth.rows(); ++i) {
      if (!mask(i, j)) continue;
      const double d = pred(i, j) - truth(i, j);
      sum_sq += d * d;
      sum += truth(i, j);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("rrmse mask selects no entries");
  const double mean = sum / static_cast<double>(n);
  if (mean == 0.0) throw std::invalid_argument("rrmse undefined: truth has zero mean over the mask");
  return std::sqrt(sum_sq / static_cast<double>(n)) / mean;
}

// Vector form of rrmse over all entries.
inline double rrmse(const Vector& truth, const Vector& pred) {
  return rrmse(Matrix(truth), Matrix(pred), MaskMatrix::Constant(truth.size(), 1, true));
}

/// P(score_pos > score_neg) + 0.5 P(score_pos = score_neg), via midranks.
inline double auroc(const std::vector<bool>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[order[end]] == scores[order[k]]) ++end;
    // Ranks k+1..end share the midrank (k + 1 + end) / 2.
    const double midrank = 0.5 * static_cast<double>(k + 1 + end);
    for (std::size_t m = k; m < end; ++m)
      if (labels[order[m]]) {
        positive_rank_sum += midrank;
        n_pos += 1.0;
      }
    k = end;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0)
    throw std::invalid_argument("auroc needs at least one positive and one negative label");
  return (positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Average precision: precision summed at each positive in descending score order,
/// with tied scores handled as one group.
inline double auprc(const std::vector<bool>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("labels and scores differ in length");
  const std::size_t n = labels.size();
  const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  if (total_pos == 0.0) throw std::invalid_argument("auprc needs at least one positive label");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0;
  double fp = 0.0;
  double ap = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    double group_pos = 0.0;
    while (end < n && scores[order[end]] == scores[order[k]]) {
      if (labels[order[end]]) group_pos += 1.0; else fp += 1.0;
      ++end;
    }
    tp += group_pos;
    if (group_pos > 0.0) ap += group_pos * (tp / (tp + fp));
    k = end;
  }
  return ap / total_pos;
}

struct FoldMetrics {
  double rrmse = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
};

struct EvalReport {
  double rrmse = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  std::vector<FoldMetrics> per_fold;
};

/// Uniform random partition of the observed positions into k folds whose sizes differ by at most one.
inline std::vector<std::vector<Position>> kfold_split(const MaskMatrix& mask, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("need at least two folds");
  std::vector<Position> positions;
  for (Index j = 0; j < mask.cols(); ++j)
    for (Index i = 0; i < mask.rows(); ++i)
      if (mask(i, j)) positions.push_back({i, j});
  if (positions.size() < static_cast<std::size_t>(k))
    throw std::invalid_argument("more folds than observed entries");
  std::mt19937_64 rng(seed);
  std::shuffle(positions.begin(), positions.end(), rng);
  std::vector<std::vector<Position>> folds(static_cast<std::size_t>(k));
  for (std::size_t n = 0; n < positions.size(); ++n) folds[n % static_cast<std::size_t>(k)].push_back(positions[n]);
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

}  // namespace nmix
