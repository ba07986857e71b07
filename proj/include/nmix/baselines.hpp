#pragma once

#include "nmix/likelihood.hpp"
#include "nmix/random.hpp"
#include "nmix/types.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmix {

// Return false to stop after the current iteration.
using FactorCallback = std::function<bool(int iteration, const FactorModel&)>;

struct PoissonNmfResult {
  FactorModel factors;
  // Objective sum_Omega [lambda - y log lambda] at initialization, then after each iteration.
  std::vector<double> objective_trace;
  int iterations = 0;
};

namespace detail {

inline double PoissonObjective(const CountDataset& data, const FactorModel& f) {
  double total = 0.0;
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      total += NegLogLikTerm(static_cast<double>(data.counts(i, j)), f.Rate(i, j), 1.0);
    }
  return total;
}

// KL-NMF multiplicative step on `a` (n x F) against `b` (m x F) for counts y (n x m)
// with 0/1 weights w.
inline void KlMuStep(Matrix& a, const Matrix& b, const Matrix& y, const Matrix& w, double epsilon) {
  const Index n = a.rows();
  const Index m = b.rows();
  const Index rank = a.cols();
  Matrix updated(n, rank);
  Vector ratio(m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (y(i, j) == 0.0) {
        ratio(j) = 0.0;
        continue;
      }
      const double rate = a.row(i).dot(b.row(j));
      ratio(j) = y(i, j) / (rate > 0.0 ? rate : epsilon);
    }
    for (Index r = 0; r < rank; ++r) {
      double numer = 0.0;
      double denom = 0.0;
      for (Index j = 0; j < m; ++j) {
        numer += ratio(j) * b(j, r);
        denom += w(i, j) * b(j, r);
      }
      updated(i, r) = std::max(a(i, r) * numer / (denom + epsilon), kFactorFloor);
    }
  }
  a = std::move(updated);
}

}  // namespace detail

/// Standard KL-divergence NMF by multiplicative updates on the observed entries.
/// With impute_missing, unobserved entries are filled with the current rate before each
/// half-step; otherwise they carry zero weight.
inline PoissonNmfResult poisson_nmf(const CountDataset& data, Index rank, int max_iter, double epsilon,
                                    std::uint64_t seed = 0, bool impute_missing = false,
                                    double tol = 0.0, const FactorCallback& callback = {}) {
  data.Validate();
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  if (max_iter < 0) throw std::invalid_argument("max_iter must be >= 0");

  std::mt19937_64 rng(seed);
  PoissonNmfResult result;
  result.factors = RandomFactors(data.rows(), data.cols(), rank, rng);
  FactorModel& f = result.factors;

  Matrix w(data.rows(), data.cols());
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i)
      w(i, j) = data.observed(i, j) ? 1.0 : (impute_missing ? 1.0 : 0.0);
  const auto working_counts = [&] {
    Matrix y(data.rows(), data.cols());
    for (Index j = 0; j < data.cols(); ++j)
      for (Index i = 0; i < data.rows(); ++i) {
        if (data.observed(i, j)) y(i, j) = static_cast<double>(data.counts(i, j));
        else y(i, j) = impute_missing ? f.Rate(i, j) : 0.0;
      }
    return y;
  };

  double objective = detail::PoissonObjective(data, f);
  result.objective_trace.push_back(objective);
  for (int t = 1; t <= max_iter; ++t) {
    detail::KlMuStep(f.u, f.v, working_counts(), w, epsilon);
    const Matrix wt = w.transpose();
    const Matrix yt = working_counts().transpose();
    detail::KlMuStep(f.v, f.u, yt, wt, epsilon);
    const double next = detail::PoissonObjective(data, f);
    if (!std::isfinite(next))
      throw NumericalError("Poisson NMF objective became non-finite at iteration " + std::to_string(t));
    result.objective_trace.push_back(next);
    result.iterations = t;
    const double change = std::abs(objective - next) / std::max(1.0, std::abs(objective));
    objective = next;
    if (callback && !callback(t, f)) break;
    if (tol > 0.0 && change < tol) break;
  }
  return result;
}

struct McCfResult {
  FactorModel factors;  // unconstrained signs
  std::vector<double> loss_trace;
  int iterations = 0;
};

namespace detail {

inline double McCfLoss(const CountDataset& data, const FactorModel& f, double reg) {
  double loss = reg * (f.u.squaredNorm() + f.v.squaredNorm());
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double r = static_cast<double>(data.counts(i, j)) - f.Rate(i, j);
      loss += r * r;
    }
  return loss;
}

// Exact ridge minimization of every row of `a` with `b` fixed; `observed` and `y` are n x m.
inline void RidgeRows(Matrix& a, const Matrix& b, const MaskMatrix& observed, const Matrix& y, double reg) {
  const Index rank = a.cols();
  for (Index i = 0; i < a.rows(); ++i) {
    Matrix gram = reg * Matrix::Identity(rank, rank);
    Vector rhs = Vector::Zero(rank);
    for (Index j = 0; j < b.rows(); ++j) {
      if (!observed(i, j)) continue;
      gram.noalias() += b.row(j).transpose() * b.row(j);
      rhs.noalias() += y(i, j) * b.row(j).transpose();
    }
    if (reg > 0.0)
      a.row(i) = gram.ldlt().solve(rhs).transpose();
    else
      a.row(i) = gram.completeOrthogonalDecomposition().solve(rhs).transpose();
  }
}

}  // namespace detail

/// Alternating ridge least squares for sum_Omega (y - u_i.v_j)^2 + reg (||U||^2 + ||V||^2).
inline McCfResult mc_cf(const CountDataset& data, Index rank, double reg, int max_iter,
                        std::uint64_t seed = 0, const FactorCallback& callback = {}) {
  data.Validate();
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  if (!(reg >= 0.0)) throw std::invalid_argument("regularization must be >= 0");
  if (max_iter < 0) throw std::invalid_argument("max_iter must be >= 0");

  std::mt19937_64 rng(seed);
  McCfResult result;
  result.factors = RandomFactors(data.rows(), data.cols(), rank, rng);
  FactorModel& f = result.factors;
  const Matrix y = data.ObservedCountsAsDouble();
  const Matrix yt = y.transpose();
  const MaskMatrix observed_t = data.observed.transpose();

  result.loss_trace.push_back(detail::McCfLoss(data, f, reg));
  for (int t = 1; t <= max_iter; ++t) {
    detail::RidgeRows(f.u, f.v, data.observed, y, reg);
    detail::RidgeRows(f.v, f.u, observed_t, yt, reg);
    result.loss_trace.push_back(detail::McCfLoss(data, f, reg));
    result.iterations = t;
    if (callback && !callback(t, f)) break;
  }
  return result;
}

/// Best rank-F Frobenius approximation of the count matrix with unobserved entries set to zero.
inline Matrix truncated_svd(const CountDataset& data, Index rank) {
  data.Validate();
  if (rank < 1 || rank > std::min(data.rows(), data.cols()))
    throw std::invalid_argument("rank must lie in [1, min(I, J)]");
  const Matrix y = data.ObservedCountsAsDouble();
  const Eigen::BDCSVD<Matrix> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal() *
         svd.matrixV().leftCols(rank).transpose();
}

}  // namespace nmix
