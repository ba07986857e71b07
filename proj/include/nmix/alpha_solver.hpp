#pragma once

#include "nmix/likelihood.hpp"
#include "nmix/types.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace nmix {

/// Closed-form minimizer over [0, 1] of -y log p + p lambda + (rho / 2)(p - p_bar)^2, elementwise.
inline Vector p_update(const Vector& y, const Vector& lambda, const Vector& p_bar, double rho) {
  if (!(rho > 0)) throw std::invalid_argument("rho must be > 0");
  if (y.size() != lambda.size() || y.size() != p_bar.size())
    throw std::invalid_argument("p_update inputs must have equal length");
  Vector p(y.size());
  for (Index k = 0; k < y.size(); ++k) {
    const double b = rho * p_bar(k) - lambda(k);
    const double s = std::sqrt(b * b + 4.0 * rho * y(k));
    // Positive root of rho p^2 - b p - y = 0; the second form avoids cancellation when b < 0.
    double root = 0.0;
    if (b >= 0.0)
      root = (b + s) / (2.0 * rho);
    else if (s - b > 0.0)
      root = 2.0 * y(k) / (s - b);
    p(k) = std::clamp(root, 0.0, 1.0);
  }
  return p;
}

/// Working state of the ADMM iterations, restricted to the observed entries.
struct AdmmState {
  Vector p;       // auxiliary detection probabilities, |Omega|
  Vector omega;   // scaled dual variable, |Omega|
  Vector p_bar;   // Z alpha - omega
  double rho = 1.0;
  Matrix z;       // |Omega| x R, design rows of the observed entries
  Matrix z_pinv;  // R x |Omega|
};

// alpha = Z^+ (p + omega): the least-squares alpha step.
inline Vector alpha_ls(const AdmmState& state) {
  if (state.z_pinv.cols() != state.p.size() || state.p.size() != state.omega.size())
    throw std::invalid_argument("alpha_ls dimension mismatch");
  return state.z_pinv * (state.p + state.omega);
}

// omega <- p - Z alpha + omega.
inline Vector dual_update(const AdmmState& state, const Vector& alpha) {
  if (state.z.cols() != alpha.size() || state.z.rows() != state.p.size() ||
      state.p.size() != state.omega.size())
    throw std::invalid_argument("dual_update dimension mismatch");
  return state.p - state.z * alpha + state.omega;
}

struct AdmmDiagnostics {
  int iterations = 0;
  bool converged = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double tolerance = 0.0;
  Index design_rank = 0;
  bool rank_deficient = false;
  double rho = 1.0;
  // Detection-subproblem objective at the auxiliary p after each iteration.
  std::vector<double> objective_trace;
};

struct AlphaSolution {
  Vector alpha;
  Matrix p;  // I x J
  AdmmDiagnostics diagnostics;
};

/// Objective of the detection subproblem, sum over observed (i,j) of p lambda - y log p.
inline double alpha_subproblem_objective(const Vector& y, const Vector& lambda, const Vector& p) {
  double f = 0.0;
  for (Index k = 0; k < y.size(); ++k) {
    if (y(k) > 0.0 && p(k) <= 0.0) return std::numeric_limits<double>::infinity();
    f += p(k) * lambda(k) - detail::XLogY(y(k), p(k));
  }
  return f;
}

/// ADMM solver for the detection block. The Omega-restricted design matrix and its
/// pseudo-inverse are computed once at construction and reused across outer iterations.
class AlphaSolver {
 public:
  AlphaSolver(const MaskMatrix& observed, const FeatureSet& features,
              double rank_tolerance = 1e-12)
      : observed_(observed) {
    features.Validate();
    if (observed.rows() != features.n_rows || observed.cols() != features.n_cols)
      throw std::invalid_argument("feature layout does not match the observed mask");
    for (Index j = 0; j < observed.cols(); ++j)
      for (Index i = 0; i < observed.rows(); ++i)
        if (observed(i, j)) positions_.push_back({i, j});
    if (positions_.empty()) throw std::invalid_argument("no observed entries");

    z_.resize(static_cast<Index>(positions_.size()), features.n_features());
    for (std::size_t k = 0; k < positions_.size(); ++k)
      z_.row(static_cast<Index>(k)) = features.z.row(features.RowOf(positions_[k].row, positions_[k].col));

    Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
    cod.setThreshold(rank_tolerance);
    cod.compute(z_);
    z_pinv_ = cod.pseudoInverse();
    rank_ = cod.rank();

    const Eigen::JacobiSVD<Matrix> svd(z_);
    const Vector& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    condition_number_ = smin > 0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  }

  const std::vector<Position>& positions() const { return positions_; }
  const Matrix& design() const { return z_; }
  const Matrix& pseudo_inverse() const { return z_pinv_; }
  Index design_rank() const { return rank_; }
  double condition_number() const { return condition_number_; }
  bool rank_deficient() const { return rank_ < z_.cols(); }

  Vector Gather(const Matrix& m) const {
    Vector out(static_cast<Index>(positions_.size()));
    for (std::size_t k = 0; k < positions_.size(); ++k)
      out(static_cast<Index>(k)) = m(positions_[k].row, positions_[k].col);
    return out;
  }

  Vector GatherCounts(const CountDataset& data) const {
    Vector out(static_cast<Index>(positions_.size()));
    for (std::size_t k = 0; k < positions_.size(); ++k)
      out(static_cast<Index>(k)) = static_cast<double>(data.counts(positions_[k].row, positions_[k].col));
    return out;
  }

  /// Runs ADMM from warm_alpha. warm_p seeds the auxiliary variable and supplies the
  /// values kept at unobserved positions; when absent, clip(Z warm_alpha) is used.
  AlphaSolution Solve(const CountDataset& data, const Matrix& lambda, const FitConfig& config,
                      const Vector& warm_alpha, const Matrix* warm_p = nullptr) const {
    if (!(config.rho > 0)) throw std::invalid_argument("rho must be > 0");
    if (warm_alpha.size() != z_.cols()) throw std::invalid_argument("warm alpha has wrong length");
    if (lambda.rows() != observed_.rows() || lambda.cols() != observed_.cols())
      throw std::invalid_argument("rate matrix dimensions do not match the data");
    if (!lambda.allFinite() || lambda.minCoeff() < 0.0)
      throw std::invalid_argument("rates must be finite and nonnegative");

    AdmmState state;
    state.rho = config.rho;
    state.z = z_;
    state.z_pinv = z_pinv_;

    const Vector y = GatherCounts(data);
    const Vector lam = Gather(lambda);
    const Index m = y.size();

    Matrix full_p;
    if (warm_p != nullptr) {
      if (warm_p->rows() != observed_.rows() || warm_p->cols() != observed_.cols())
        throw std::invalid_argument("warm p dimensions do not match the data");
      full_p = *warm_p;
      state.p = Gather(full_p);
    } else {
      state.p = (z_ * warm_alpha).cwiseMax(0.0).cwiseMin(1.0);
      full_p = Matrix::Zero(observed_.rows(), observed_.cols());
      const Vector all = z_ * warm_alpha;
      for (std::size_t k = 0; k < positions_.size(); ++k)
        full_p(positions_[k].row, positions_[k].col) = std::clamp(all(static_cast<Index>(k)), 0.0, 1.0);
    }
    state.omega = Vector::Zero(m);

    AlphaSolution out;
    AdmmDiagnostics& diag = out.diagnostics;
    diag.tolerance = config.admm_tol * std::sqrt(static_cast<double>(m));
    diag.design_rank = rank_;
    diag.rank_deficient = rank_deficient();
    diag.rho = config.rho;

    Vector alpha = warm_alpha;
    Vector z_alpha = z_ * alpha;
    for (int it = 0; it < config.admm_max_iter; ++it) {
      state.p_bar = z_alpha - state.omega;
      const Vector p_prev = state.p;
      state.p = p_update(y, lam, state.p_bar, state.rho);
      alpha = alpha_ls(state);
      state.omega = dual_update(state, alpha);
      z_alpha = z_ * alpha;

      diag.iterations = it + 1;
      diag.primal_residual = (state.p - z_alpha).norm();
      diag.dual_residual = state.rho * (z_.transpose() * (state.p - p_prev)).norm();
      diag.objective_trace.push_back(alpha_subproblem_objective(y, lam, state.p));
      if (std::max(diag.primal_residual, diag.dual_residual) <= diag.tolerance) {
        diag.converged = true;
        break;
      }
    }

    for (std::size_t k = 0; k < positions_.size(); ++k) {
      const Index kk = static_cast<Index>(k);
      double p = state.p(kk);
      if (y(kk) > 0.0) p = std::clamp(p, kDetectionFloor, 1.0);
      full_p(positions_[k].row, positions_[k].col) = p;
    }
    out.alpha = alpha;
    out.p = std::move(full_p);
    return out;
  }

 private:
  MaskMatrix observed_;
  std::vector<Position> positions_;
  Matrix z_;
  Matrix z_pinv_;
  Index rank_ = 0;
  double condition_number_ = 0.0;
};

/// Solves the detection subproblem for fixed rates by ADMM. Builds the design
/// pseudo-inverse for this call; use AlphaSolver directly to reuse it.
inline AlphaSolution solve_alpha_admm(const CountDataset& data, const Matrix& lambda,
                                      const FeatureSet& features, const FitConfig& config,
                                      const Vector& warm_alpha) {
  data.Validate();
  const AlphaSolver solver(data.observed, features);
  return solver.Solve(data, lambda, config, warm_alpha);
}

}  // namespace nmix
