#pragma once

#include "nmix/random.hpp"
#include "nmix/types.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace nmix {

struct SynthConfig {
  Index n_rows = 50;
  Index n_cols = 50;
  Index rank = 15;
  Index n_features = 8;
  double gamma = 15.0;
  double target_max_p = 0.9;
  std::uint64_t seed = 0;
  // When set, z = 1, R = 1 and alpha = [constant_p] instead of random features.
  std::optional<double> constant_p;

  void Validate() const {
    if (n_rows < 1 || n_cols < 1) throw std::invalid_argument("dimensions must be positive");
    if (rank < 1 || rank > std::min(n_rows, n_cols))
      throw std::invalid_argument("rank must lie in [1, min(I, J)]");
    if (!constant_p && n_features < 1) throw std::invalid_argument("need at least one feature");
    if (!(gamma > 0)) throw std::invalid_argument("gamma must be > 0");
    if (!(target_max_p > 0 && target_max_p <= 1))
      throw std::invalid_argument("target_max_p must lie in (0, 1]");
    if (constant_p && !(*constant_p >= 0 && *constant_p <= 1))
      throw std::invalid_argument("constant detection probability must lie in [0, 1]");
  }
};

struct SyntheticInstance {
  FactorModel factors;
  Vector alpha;
  FeatureSet features;
  DetectionModel detection;
  std::vector<Index> anchor_rows_u;  // rows of U overwritten with gamma * e_f, in order f = 0..F-1
  std::vector<Index> anchor_rows_v;
};

namespace detail {

// Overwrites `rank` distinct random rows with gamma times the identity rows.
inline std::vector<Index> PlantSeparableRows(Matrix& m, double gamma, std::mt19937_64& rng) {
  std::vector<Index> rows(static_cast<std::size_t>(m.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(m.cols()));
  for (Index f = 0; f < m.cols(); ++f) {
    m.row(rows[static_cast<std::size_t>(f)]).setZero();
    m(rows[static_cast<std::size_t>(f)], f) = gamma;
  }
  return rows;
}

}  // namespace detail

/// Ground-truth instance: Uniform(0, gamma) factors with planted separable rows,
/// Uniform(0, 1) features, and alpha scaled so that max z.alpha = target_max_p.
inline SyntheticInstance generate_instance(const SynthConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  SyntheticInstance inst;
  inst.factors.u = UniformMatrix(config.n_rows, config.rank, 0.0, config.gamma, rng);
  inst.factors.v = UniformMatrix(config.n_cols, config.rank, 0.0, config.gamma, rng);
  inst.anchor_rows_u = detail::PlantSeparableRows(inst.factors.u, config.gamma, rng);
  inst.anchor_rows_v = detail::PlantSeparableRows(inst.factors.v, config.gamma, rng);

  if (config.constant_p) {
    inst.features = FeatureSet::Constant(config.n_rows, config.n_cols);
    inst.alpha = Vector::Constant(1, *config.constant_p);
  } else {
    inst.features = FeatureSet{
        UniformMatrix(config.n_rows * config.n_cols, config.n_features, 0.0, 1.0, rng),
        config.n_rows, config.n_cols};
    inst.alpha = UniformMatrix(config.n_features, 1, 0.0, 1.0, rng).col(0);
    const double top = (inst.features.z * inst.alpha).maxCoeff();
    inst.alpha *= config.target_max_p / top;
  }

  const Vector zp = inst.features.z * inst.alpha;
  Matrix p(config.n_rows, config.n_cols);
  for (Index j = 0; j < config.n_cols; ++j)
    for (Index i = 0; i < config.n_rows; ++i) p(i, j) = std::min(zp(inst.features.RowOf(i, j)), 1.0);
  inst.detection = DetectionModel{inst.alpha, std::move(p)};
  return inst;
}

}  // namespace nmix
