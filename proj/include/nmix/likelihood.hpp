#pragma once

#include "nmix/types.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>

namespace nmix {

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// x * log(y) with the 0 * log(0) = 0 convention.
inline double XLogY(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

inline double LogFactorial(std::int64_t n) { return std::lgamma(static_cast<double>(n) + 1.0); }

inline void CheckProbability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
}

inline void CheckRate(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("rate must be finite and nonnegative");
}

}  // namespace detail

/// Log of Pr(Y = y) when N ~ Poisson(lambda) and Y | N ~ Binomial(N, p), which
/// collapses to the Poisson(p * lambda) pmf. Returns -inf when y > 0 and p * lambda = 0.
inline double collapsed_loglik(std::int64_t y, double lambda, double p) {
  if (y < 0) throw std::invalid_argument("count must be nonnegative");
  detail::CheckRate(lambda);
  detail::CheckProbability(p);
  if (y > 0 && p * lambda == 0.0) return -detail::kInf;
  const double yd = static_cast<double>(y);
  return detail::XLogY(yd, p) + detail::XLogY(yd, lambda) - lambda * p - detail::LogFactorial(y);
}

/// Sum_{n=y}^{n_max} Poisson(n; lambda) * Binomial(y | n, p), accumulated in log space.
inline double truncated_mixture_sum(std::int64_t y, double lambda, double p, std::int64_t n_max) {
  if (y < 0) throw std::invalid_argument("count must be nonnegative");
  if (n_max < y) throw std::invalid_argument("n_max must be >= y");
  detail::CheckRate(lambda);
  detail::CheckProbability(p);

  const double yd = static_cast<double>(y);
  // Terms that do not depend on n.
  const double fixed = -lambda - detail::LogFactorial(y) + detail::XLogY(yd, p);
  double running_max = -detail::kInf;
  double scaled_sum = 0.0;  // sum of exp(term - running_max)
  for (std::int64_t n = y; n <= n_max; ++n) {
    const double m = static_cast<double>(n - y);
    const double term = fixed + detail::XLogY(static_cast<double>(n), lambda) +
                        detail::XLogY(m, 1.0 - p) - detail::LogFactorial(n - y);
    if (term == -detail::kInf) continue;
    if (term > running_max) {
      scaled_sum = scaled_sum * std::exp(running_max - term) + 1.0;
      running_max = term;
    } else {
      scaled_sum += std::exp(term - running_max);
    }
  }
  if (running_max == -detail::kInf) return 0.0;
  return std::exp(running_max + std::log(scaled_sum));
}

namespace detail {

inline void CheckShapes(const CountDataset& data, const FactorModel& factors,
                        const DetectionModel& detection) {
  if (factors.u.rows() != data.rows() || factors.v.rows() != data.cols() ||
      factors.u.cols() != factors.v.cols())
    throw std::invalid_argument("factor dimensions do not match the data");
  if (detection.p.rows() != data.rows() || detection.p.cols() != data.cols())
    throw std::invalid_argument("detection matrix dimensions do not match the data");
  if (data.observed.rows() != data.rows() || data.observed.cols() != data.cols())
    throw std::invalid_argument("observed mask shape does not match counts");
}

// One term lambda * p - y log p - y log lambda of the negative log-likelihood.
inline double NegLogLikTerm(double y, double lambda, double p) {
  if (y > 0.0 && (p <= 0.0 || lambda <= 0.0)) return kInf;
  return lambda * p - XLogY(y, p) - XLogY(y, lambda);
}

}  // namespace detail

/// Negative log-likelihood over the observed entries, without the constant sum of log(y!).
/// Returns +inf when some y > 0 has p * lambda = 0.
inline double total_objective(const CountDataset& data, const FactorModel& factors,
                              const DetectionModel& detection) {
  detail::CheckShapes(data, factors, detection);
  double total = 0.0;
  for (Index j = 0; j < data.cols(); ++j) {
    for (Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double p = detection.p(i, j);
      detail::CheckProbability(p);
      total += detail::NegLogLikTerm(static_cast<double>(data.counts(i, j)), factors.Rate(i, j), p);
    }
  }
  return total;
}

/// Sum of log(y!) over observed entries; the constant dropped from total_objective.
inline double log_factorial_constant(const CountDataset& data) {
  double c = 0.0;
  for (Index j = 0; j < data.cols(); ++j)
    for (Index i = 0; i < data.rows(); ++i)
      if (data.observed(i, j)) c += detail::LogFactorial(data.counts(i, j));
  return c;
}

// Full log-likelihood over observed entries, including the log(y!) constant.
inline double full_loglik(const CountDataset& data, const FactorModel& factors,
                          const DetectionModel& detection) {
  return -(total_objective(data, factors, detection) + log_factorial_constant(data));
}

/// Draws N_ij ~ Poisson(lambda_ij) and y_ij ~ Binomial(N_ij, p_ij). Deterministic given seed.
inline std::pair<LatentCounts, CountDataset> sample_network(const FactorModel& factors,
                                                            const DetectionModel& detection,
                                                            std::uint64_t seed) {
  const Matrix lambda = factors.Rates();
  if (detection.p.rows() != lambda.rows() || detection.p.cols() != lambda.cols())
    throw std::invalid_argument("detection matrix dimensions do not match the factors");
  std::mt19937_64 rng(seed);
  LatentCounts latent{CountMatrix::Zero(lambda.rows(), lambda.cols())};
  CountMatrix y = CountMatrix::Zero(lambda.rows(), lambda.cols());
  for (Index j = 0; j < lambda.cols(); ++j) {
    for (Index i = 0; i < lambda.rows(); ++i) {
      const double rate = lambda(i, j);
      const double p = detection.p(i, j);
      detail::CheckRate(rate);
      detail::CheckProbability(p);
      std::int64_t n = 0;
      if (rate > 0.0) n = std::poisson_distribution<std::int64_t>(rate)(rng);
      std::int64_t obs = 0;
      if (n > 0) obs = std::binomial_distribution<std::int64_t>(n, p)(rng);
      latent.counts(i, j) = n;
      y(i, j) = obs;
    }
  }
  return {std::move(latent), CountDataset::FullyObserved(y)};
}

}  // namespace nmix
