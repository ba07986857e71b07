#pragma once

#include "nmix/likelihood.hpp"
#include "nmix/types.hpp"

#include <cmath>
#include <stdexcept>

namespace nmix {

/// Intermediate quantities of one multiplicative step.
struct MuWorkspace {
  Matrix u_tilde;  // I x F, row i = sum_j p_ij v_j
  Matrix v_tilde;  // J x F, row j = sum_i p_ij u_i
  Matrix phi;      // I x F, (Y ./ U V^T) V
  Matrix psi;      // J x F, (Y^T ./ V U^T) U
  double epsilon = 1e-12;
};

namespace detail {

inline void CheckMuInputs(const Matrix& u, const Matrix& v, const Matrix& p, const Matrix& y) {
  if (u.cols() != v.cols()) throw std::invalid_argument("factor ranks differ");
  if (p.rows() != u.rows() || p.cols() != v.rows() || y.rows() != u.rows() || y.cols() != v.rows())
    throw std::invalid_argument("weight or count matrix shape does not match the factors");
  if (!(u.minCoeff() > 0.0) || !(v.minCoeff() > 0.0))
    throw std::invalid_argument("factors must be strictly positive");
  if (!u.allFinite() || !v.allFinite()) throw std::invalid_argument("factors must be finite");
  if (!(p.minCoeff() >= 0.0) || !(p.maxCoeff() <= 1.0))
    throw std::invalid_argument("weights must lie in [0, 1]");
  if (!(y.minCoeff() >= 0.0) || !y.allFinite())
    throw std::invalid_argument("counts must be finite and nonnegative");
}

// Y ./ (U V^T), with zero rates replaced by epsilon.
inline Matrix CountRateRatio(const Matrix& y, const Matrix& u, const Matrix& v, double epsilon) {
  Matrix ratio = u * v.transpose();
  for (Index j = 0; j < ratio.cols(); ++j)
    for (Index i = 0; i < ratio.rows(); ++i) {
      const double rate = ratio(i, j);
      ratio(i, j) = y(i, j) / (rate > 0.0 ? rate : epsilon);
    }
  return ratio;
}

// One multiplicative step for the `u` block with `v` fixed. p and y are |u| x |v|.
inline Matrix MuStep(const Matrix& u, const Matrix& v, const Matrix& p, const Matrix& y,
                     double epsilon, Matrix* tilde_out = nullptr, Matrix* numer_out = nullptr) {
  const Matrix tilde = p * v;
  const Matrix numer = CountRateRatio(y, u, v, epsilon) * v;
  Matrix updated = (u.array() * numer.array() / (tilde.array() + epsilon)).matrix();
  updated = updated.cwiseMax(kFactorFloor);
  if (tilde_out != nullptr) *tilde_out = tilde;
  if (numer_out != nullptr) *numer_out = numer;
  return updated;
}

}  // namespace detail

/// U <- (U o Phi) ./ (U~ + eps), floored at kFactorFloor. p is the I x J weight matrix
/// and y the (possibly imputed) I x J count matrix.
inline Matrix mu_update_u(const FactorModel& factors, const Matrix& p, const Matrix& y,
                          double epsilon, MuWorkspace* workspace = nullptr) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  detail::CheckMuInputs(factors.u, factors.v, p, y);
  if (workspace == nullptr) return detail::MuStep(factors.u, factors.v, p, y, epsilon);
  workspace->epsilon = epsilon;
  return detail::MuStep(factors.u, factors.v, p, y, epsilon, &workspace->u_tilde, &workspace->phi);
}

// Mirror of mu_update_u with rows and columns exchanged.
inline Matrix mu_update_v(const FactorModel& factors, const Matrix& p, const Matrix& y,
                          double epsilon, MuWorkspace* workspace = nullptr) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  detail::CheckMuInputs(factors.u, factors.v, p, y);
  const Matrix pt = p.transpose();
  const Matrix yt = y.transpose();
  if (workspace == nullptr) return detail::MuStep(factors.v, factors.u, pt, yt, epsilon);
  workspace->epsilon = epsilon;
  return detail::MuStep(factors.v, factors.u, pt, yt, epsilon, &workspace->v_tilde, &workspace->psi);
}

/// Weighted KL objective sum_ij [p_ij u_i.v_j - y_ij log(u_i.v_j)] over all entries of y.
inline double weighted_kl_objective(const FactorModel& factors, const Matrix& p, const Matrix& y) {
  const Matrix lambda = factors.Rates();
  double f = 0.0;
  for (Index j = 0; j < lambda.cols(); ++j)
    for (Index i = 0; i < lambda.rows(); ++i) {
      if (y(i, j) > 0.0 && lambda(i, j) <= 0.0) return detail::kInf;
      f += p(i, j) * lambda(i, j) - detail::XLogY(y(i, j), lambda(i, j));
    }
  return f;
}

// f(u) for one row: sum_j [p_j u.v_j - y_j log(u.v_j)].
inline double row_objective(const Vector& u, const Matrix& v, const Vector& p_row,
                            const Vector& y_row) {
  double f = 0.0;
  for (Index j = 0; j < v.rows(); ++j) {
    const double rate = v.row(j).dot(u);
    if (y_row(j) > 0.0 && rate <= 0.0) return detail::kInf;
    f += p_row(j) * rate - detail::XLogY(y_row(j), rate);
  }
  return f;
}

namespace detail {

inline void CheckSurrogateInputs(const Vector& u, const Vector& u_bar, const Matrix& v,
                                 const Vector& p_row, const Vector& y_row) {
  if (u.size() != v.cols() || u_bar.size() != v.cols() || p_row.size() != v.rows() ||
      y_row.size() != v.rows())
    throw std::invalid_argument("surrogate input dimensions disagree");
  if (!(u.minCoeff() > 0.0) || !(u_bar.minCoeff() > 0.0))
    throw std::invalid_argument("surrogate arguments must be strictly positive");
  if (!(v.minCoeff() >= 0.0)) throw std::invalid_argument("v must be nonnegative");
}

}  // namespace detail

/// Jensen majorizer g(u, u_bar) of row_objective, tight at u = u_bar.
inline double row_surrogate(const Vector& u, const Vector& u_bar, const Matrix& v,
                            const Vector& p_row, const Vector& y_row) {
  detail::CheckSurrogateInputs(u, u_bar, v, p_row, y_row);
  const Vector u_tilde = v.transpose() * p_row;
  double g = u.dot(u_tilde);
  for (Index j = 0; j < v.rows(); ++j) {
    if (y_row(j) == 0.0) continue;
    const double denom = u_bar.dot(v.row(j));
    if (!(denom > 0.0)) return detail::kInf;
    for (Index r = 0; r < v.cols(); ++r) {
      const double beta = u_bar(r) * v(j, r) / denom;
      if (beta == 0.0) continue;
      g -= y_row(j) * beta * std::log(u(r) * v(j, r) / beta);
    }
  }
  return g;
}

// g(u_candidate, u_bar) - f(u_candidate); nonnegative, zero at u_candidate = u_bar.
inline double surrogate_gap(const Vector& u_candidate, const Vector& u_bar, const Matrix& v,
                            const Vector& p_row, const Vector& y_row) {
  return row_surrogate(u_candidate, u_bar, v, p_row, y_row) -
         row_objective(u_candidate, v, p_row, y_row);
}

/// Gradient of g(., u_bar) at u: u~_r - (sum_j y_j beta_r^(j)) / u_r.
inline Vector surrogate_gradient(const Vector& u, const Vector& u_bar, const Matrix& v,
                                 const Vector& p_row, const Vector& y_row) {
  detail::CheckSurrogateInputs(u, u_bar, v, p_row, y_row);
  Vector grad = v.transpose() * p_row;
  for (Index j = 0; j < v.rows(); ++j) {
    if (y_row(j) == 0.0) continue;
    const double denom = u_bar.dot(v.row(j));
    for (Index r = 0; r < v.cols(); ++r)
      grad(r) -= y_row(j) * (u_bar(r) * v(j, r) / denom) / u(r);
  }
  return grad;
}

}  // namespace nmix
