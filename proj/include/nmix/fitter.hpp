#pragma once

#include "nmix/alpha_solver.hpp"
#include "nmix/factor_solver.hpp"
#include "nmix/likelihood.hpp"
#include "nmix/random.hpp"
#include "nmix/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmix {

struct FitDiagnostics {
  Index design_rank = 0;
  bool design_rank_deficient = false;
  double design_condition_number = 0.0;
  long admm_iterations_total = 0;
  // Detection steps discarded because ADMM returned a worse point than the incumbent.
  int detection_steps_rejected = 0;
  AdmmDiagnostics last_admm;
};

struct FitResult {
  FactorModel factors;
  DetectionModel detection;
  // objective_trace[0] is the objective at initialization, then one value per outer iteration.
  std::vector<double> objective_trace;
  bool converged = false;
  int n_outer = 0;
  FitConfig config_echo;
  Matrix lambda_hat;  // U V^T
  Matrix n_hat;       // posterior-mean surrogate of the latent counts, equal to lambda_hat
  FitDiagnostics diagnostics;

  // Expected observed counts p_hat o lambda_hat, with p_hat = clip(Z alpha) at every pair.
  Matrix PredictCounts(const FeatureSet& features) const {
    return DetectionFromAlpha(features, detection.alpha).cwiseProduct(lambda_hat);
  }
};

struct FitProgress {
  int iteration = 0;
  double objective = 0.0;
  const FactorModel* factors = nullptr;
  const DetectionModel* detection = nullptr;
};

// Return false to stop the outer loop after the current iteration.
using FitCallback = std::function<bool(const FitProgress&)>;

/// Dense count matrix for the factor updates: observed counts, with unobserved entries
/// replaced by the current rate u_i . v_j.
inline Matrix impute_missing(const CountDataset& data, const FactorModel& factors) {
  if (factors.u.rows() != data.rows() || factors.v.rows() != data.cols())
    throw std::invalid_argument("factor dimensions do not match the data");
  Matrix y(data.rows(), data.cols());
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i)
      y(i, j) = data.observed(i, j) ? static_cast<double>(data.counts(i, j)) : factors.Rate(i, j);
  return y;
}

namespace detail {

inline void ValidateFitInputs(const CountDataset& data, const FeatureSet& features,
                              const FitConfig& config) {
  data.Validate();
  features.Validate();
  config.Validate();
  if (features.n_rows != data.rows() || features.n_cols != data.cols())
    throw std::invalid_argument("feature layout does not match the count matrix");
  if (config.fixed_alpha && config.fixed_alpha->size() != features.n_features())
    throw std::invalid_argument("fixed alpha length does not match the feature count");
}

// Weights for the factor updates: P on observed entries; unobserved entries carry weight
// one when imputed (so the imputed value is the fixed point of its own term) and zero otherwise.
inline Matrix FactorWeights(const CountDataset& data, const Matrix& p, bool impute) {
  Matrix w(data.rows(), data.cols());
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i)
      w(i, j) = data.observed(i, j) ? p(i, j) : (impute ? 1.0 : 0.0);
  return w;
}

inline Matrix WorkingCounts(const CountDataset& data, const FactorModel& factors, bool impute) {
  return impute ? impute_missing(data, factors) : data.ObservedCountsAsDouble();
}

inline void FloorDetectionAtPositiveCounts(const CountDataset& data, Matrix& p) {
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i)
      if (data.observed(i, j) && data.counts(i, j) > 0)
        p(i, j) = std::clamp(p(i, j), kDetectionFloor, 1.0);
}

// Scales alpha so that the largest observed z.alpha equals target.
inline Vector RescaleToMaxDetection(const AlphaSolver& solver, const Vector& alpha, double target) {
  const Vector zp = solver.design() * alpha;
  const double top = zp.maxCoeff();
  if (top > 0.0) return alpha * (target / top);
  // Every z.alpha is nonpositive: fall back to the least-squares fit of a constant 0.5.
  return solver.pseudo_inverse() * Vector::Constant(zp.size(), 0.5);
}

}  // namespace detail

inline constexpr double kInitialMaxDetection = 0.9;

/// Block coordinate descent over (alpha, U, V). Each outer iteration runs the ADMM
/// detection step, then one multiplicative step on U and one on V.
inline FitResult fit(const CountDataset& data, const FeatureSet& features, const FitConfig& config,
                     const FitCallback& callback = {}) {
  detail::ValidateFitInputs(data, features, config);

  const AlphaSolver solver(data.observed, features);
  std::mt19937_64 rng(config.seed);
  FitResult result;
  result.config_echo = config;
  result.factors = RandomFactors(data.rows(), data.cols(), config.rank, rng);

  Vector alpha;
  if (config.fixed_alpha) {
    alpha = *config.fixed_alpha;
  } else {
    alpha = UniformMatrix(features.n_features(), 1, 0.0, 1.0, rng).col(0);
    alpha = detail::RescaleToMaxDetection(solver, alpha, kInitialMaxDetection);
  }
  Matrix p = DetectionFromAlpha(features, alpha);
  detail::FloorDetectionAtPositiveCounts(data, p);
  result.detection = DetectionModel{alpha, p};

  FitDiagnostics& diag = result.diagnostics;
  diag.design_rank = solver.design_rank();
  diag.design_rank_deficient = solver.rank_deficient();
  diag.design_condition_number = solver.condition_number();

  const Vector y_obs = solver.GatherCounts(data);
  double objective = total_objective(data, result.factors, result.detection);
  result.objective_trace.push_back(objective);

  for (int t = 1; t <= config.max_outer; ++t) {
    FactorModel& factors = result.factors;
    DetectionModel& detection = result.detection;

    if (!config.fixed_alpha) {
      const Matrix lambda = factors.Rates();
      AlphaSolution sol = solver.Solve(data, lambda, config, detection.alpha, &detection.p);
      diag.admm_iterations_total += sol.diagnostics.iterations;
      const Vector lam = solver.Gather(lambda);
      const double incumbent = alpha_subproblem_objective(y_obs, lam, solver.Gather(detection.p));
      const double candidate = alpha_subproblem_objective(y_obs, lam, solver.Gather(sol.p));
      if (candidate <= incumbent) {
        detection.alpha = std::move(sol.alpha);
        detection.p = std::move(sol.p);
      } else {
        ++diag.detection_steps_rejected;
      }
      diag.last_admm = std::move(sol.diagnostics);
    }

    const Matrix weights = detail::FactorWeights(data, detection.p, config.impute_missing);
    factors.u = mu_update_u(factors, weights,
                            detail::WorkingCounts(data, factors, config.impute_missing),
                            config.epsilon);
    factors.v = mu_update_v(factors, weights,
                            detail::WorkingCounts(data, factors, config.impute_missing),
                            config.epsilon);

    const double next = total_objective(data, factors, detection);
    if (!std::isfinite(next))
      throw NumericalError("objective became non-finite at outer iteration " + std::to_string(t));
    result.objective_trace.push_back(next);
    result.n_outer = t;

    const bool small_change = std::abs(objective - next) / std::max(1.0, std::abs(objective)) <
                              config.outer_tol;
    objective = next;
    if (callback && !callback(FitProgress{t, next, &factors, &detection})) break;
    if (small_change) {
      result.converged = true;
      break;
    }
  }

  result.lambda_hat = result.factors.Rates();
  result.n_hat = result.lambda_hat;
  return result;
}

/// Gradients of the smooth objective sum_Omega [lambda p - y log p - y log lambda] with p = Z alpha.
struct ObjectiveGradient {
  Matrix u;
  Matrix v;
  Vector alpha;
};

namespace detail {

inline double SmoothObjective(const CountDataset& data, const FeatureSet& features,
                              const Matrix& u, const Matrix& v, const Vector& alpha) {
  const Vector zp = features.z * alpha;
  double f = 0.0;
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double y = static_cast<double>(data.counts(i, j));
      const double lambda = u.row(i).dot(v.row(j));
      const double p = zp(features.RowOf(i, j));
      f += lambda * p - XLogY(y, p) - XLogY(y, lambda);
    }
  return f;
}

}  // namespace detail

inline ObjectiveGradient objective_gradient(const CountDataset& data, const FeatureSet& features,
                                            const FactorModel& factors, const Vector& alpha) {
  const Vector zp = features.z * alpha;
  ObjectiveGradient g{Matrix::Zero(factors.u.rows(), factors.u.cols()),
                      Matrix::Zero(factors.v.rows(), factors.v.cols()),
                      Vector::Zero(alpha.size())};
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double y = static_cast<double>(data.counts(i, j));
      const double lambda = factors.Rate(i, j);
      const Index row = features.RowOf(i, j);
      const double p = zp(row);
      const double w = p - (y == 0.0 ? 0.0 : y / lambda);
      g.u.row(i) += w * factors.v.row(j);
      g.v.row(j) += w * factors.u.row(i);
      g.alpha += (lambda - (y == 0.0 ? 0.0 : y / p)) * features.z.row(row).transpose();
    }
  return g;
}

/// Compares objective_gradient with central differences of step h at (factors, detection.alpha).
/// Per-coordinate error is |analytic - numeric| / max(|analytic|, |numeric|, 1); returns the maximum.
inline double gradient_check(const CountDataset& data, const FeatureSet& features,
                             const FactorModel& factors, const DetectionModel& detection, double h) {
  if (!(h > 0)) throw std::invalid_argument("step must be > 0");
  data.Validate();
  features.Validate();
  if (features.n_rows != data.rows() || features.n_cols != data.cols())
    throw std::invalid_argument("feature layout does not match the count matrix");
  if (factors.u.rows() != data.rows() || factors.v.rows() != data.cols())
    throw std::invalid_argument("factor dimensions do not match the data");
  if (!(factors.u.minCoeff() > 10 * h) || !(factors.v.minCoeff() > 10 * h))
    throw std::invalid_argument("factor entries must exceed 10 h");
  const Vector zp = features.z * detection.alpha;
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double p = zp(features.RowOf(i, j));
      if (!(p > 10 * h && p < 1.0 - 10 * h))
        throw std::invalid_argument("detection probabilities must lie in (10 h, 1 - 10 h)");
    }

  const ObjectiveGradient g = objective_gradient(data, features, factors, detection.alpha);
  Matrix u = factors.u;
  Matrix v = factors.v;
  Vector alpha = detection.alpha;
  const auto f = [&] { return detail::SmoothObjective(data, features, u, v, alpha); };
  double worst = 0.0;
  const auto compare = [&](double& coord, double analytic) {
    const double saved = coord;
    coord = saved + h;
    const double plus = f();
    coord = saved - h;
    const double minus = f();
    coord = saved;
    const double numeric = (plus - minus) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1.0});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  for (Index k = 0; k < u.size(); ++k) compare(u.data()[k], g.u.data()[k]);
  for (Index k = 0; k < v.size(); ++k) compare(v.data()[k], g.v.data()[k]);
  for (Index k = 0; k < alpha.size(); ++k) compare(alpha(k), g.alpha(k));
  return worst;
}

}  // namespace nmix
