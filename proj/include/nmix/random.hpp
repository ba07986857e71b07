#pragma once

#include "nmix/types.hpp"

#include <algorithm>
#include <random>

namespace nmix {

// Fills a rows x cols matrix with Uniform(low, high) draws in column-major order.
inline Matrix UniformMatrix(Index rows, Index cols, double low, double high, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(low, high);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// Uniform(0, 1) starting factors, U first then V. Every fitter draws from the same stream
// so that methods seeded alike start from identical factors.
inline FactorModel RandomFactors(Index rows, Index cols, Index rank, std::mt19937_64& rng) {
  FactorModel f;
  f.u = UniformMatrix(rows, rank, 0.0, 1.0, rng).cwiseMax(kFactorFloor);
  f.v = UniformMatrix(cols, rank, 0.0, 1.0, rng).cwiseMax(kFactorFloor);
  return f;
}

}  // namespace nmix
