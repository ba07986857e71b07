#pragma once

#include "nmix/baselines.hpp"
#include "nmix/fitter.hpp"
#include "nmix/io.hpp"
#include "nmix/metrics.hpp"
#include "nmix/types.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nmix {

enum class Method { kPoissonNmix, kPoissonNmf, kMcCf, kTruncatedSvd };

inline const char* MethodName(Method m) {
  switch (m) {
    case Method::kPoissonNmix: return "pois_nmix";
    case Method::kPoissonNmf: return "pois_nmf";
    case Method::kMcCf: return "mc_cf";
    case Method::kTruncatedSvd: return "trunc_svd";
  }
  return "unknown";
}

inline std::vector<Method> AllMethods() {
  return {Method::kPoissonNmix, Method::kPoissonNmf, Method::kMcCf, Method::kTruncatedSvd};
}

inline Method ParseMethod(const std::string& name) {
  for (Method m : AllMethods())
    if (name == MethodName(m)) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

struct CvOptions {
  std::vector<Index> ranks{2, 5, 10, 20, 40};
  int folds = 10;
  std::uint64_t seed = 0;
  std::vector<Method> methods = AllMethods();
  int max_outer = 500;
  // Validation rRMSE is checked every this many outer iterations.
  int check_every = 10;
  bool impute_missing = false;
  std::vector<double> mc_cf_regs{0.01, 0.1, 1.0};
  // Solver settings for the N-mixture fit; rank, seed, max_outer and impute_missing are overridden.
  FitConfig fit_config;
  // Worker threads; 0 reads NMIX_THREADS and falls back to the hardware concurrency.
  int threads = 0;
};

struct CvRow {
  Method method = Method::kPoissonNmix;
  Index rank = 0;
  int fold = -1;  // -1 marks the row aggregated over all test folds
  double rrmse = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  int iterations = -1;
  double regularization = std::numeric_limits<double>::quiet_NaN();
};

struct CvResult {
  std::vector<CvRow> rows;
  std::vector<std::vector<Position>> folds;

  const CvRow* Aggregate(Method m, Index rank) const {
    for (const CvRow& r : rows)
      if (r.method == m && r.rank == rank && r.fold < 0) return &r;
    return nullptr;
  }
};

namespace detail {

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline int ResolveThreads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NMIX_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct FoldPredictions {
  std::vector<double> truth;
  std::vector<double> pred;
  int iterations = -1;
  double regularization = std::numeric_limits<double>::quiet_NaN();
};

inline MaskMatrix MaskOf(const std::vector<Position>& positions, Index rows, Index cols) {
  MaskMatrix m = MaskMatrix::Constant(rows, cols, false);
  for (const Position& p : positions) m(p.row, p.col) = true;
  return m;
}

// rRMSE of predictions at `positions`, or nullopt when undefined (zero mean truth).
inline std::optional<double> HeldOutRrmse(const CountDataset& data, const Matrix& pred,
                                          const std::vector<Position>& positions) {
  double sum = 0.0, sum_sq = 0.0;
  for (const Position& p : positions) {
    const double y = static_cast<double>(data.counts(p.row, p.col));
    const double d = pred(p.row, p.col) - y;
    sum += y;
    sum_sq += d * d;
  }
  if (positions.empty() || sum == 0.0) return std::nullopt;
  const double n = static_cast<double>(positions.size());
  return std::sqrt(sum_sq / n) / (sum / n);
}

// Tracks the prediction with the best validation rRMSE and signals a stop once it worsens.
class EarlyStopper {
 public:
  EarlyStopper(const CountDataset& data, const std::vector<Position>& validation)
      : data_(data), validation_(validation) {}

  // Returns false when validation error has increased since the best check.
  bool Offer(int iteration, const Matrix& pred) {
    const auto err = HeldOutRrmse(data_, pred, validation_);
    if (!err) {
      best_pred_ = pred;
      best_iteration_ = iteration;
      return true;
    }
    if (!best_error_ || *err <= *best_error_) {
      best_error_ = err;
      best_pred_ = pred;
      best_iteration_ = iteration;
      return true;
    }
    return false;
  }

  bool has_best() const { return best_iteration_ >= 0; }
  const Matrix& best_pred() const { return best_pred_; }
  int best_iteration() const { return best_iteration_; }
  std::optional<double> best_error() const { return best_error_; }

 private:
  const CountDataset& data_;
  const std::vector<Position>& validation_;
  std::optional<double> best_error_;
  Matrix best_pred_;
  int best_iteration_ = -1;
};

inline FoldPredictions Collect(const CountDataset& data, const Matrix& pred,
                               const std::vector<Position>& test) {
  FoldPredictions out;
  for (const Position& p : test) {
    out.truth.push_back(static_cast<double>(data.counts(p.row, p.col)));
    out.pred.push_back(pred(p.row, p.col));
  }
  return out;
}

inline Matrix PredictNmix(const FeatureSet& features, const FactorModel& f, const DetectionModel& d) {
  return DetectionFromAlpha(features, d.alpha).cwiseProduct(f.Rates());
}

inline FoldPredictions RunJob(const CountDataset& data, const FeatureSet& features,
                              const CvOptions& opt, Method method, Index rank,
                              const std::vector<Position>& test, const std::vector<Position>& validation,
                              std::uint64_t seed) {
  CountDataset train = data;
  for (const Position& p : test) train.observed(p.row, p.col) = false;
  for (const Position& p : validation) train.observed(p.row, p.col) = false;
  for (Index j = 0; j < train.cols(); ++j)
    for (Index i = 0; i < train.rows(); ++i)
      if (!train.observed(i, j)) train.counts(i, j) = 0;

  const int every = std::max(1, opt.check_every);
  FoldPredictions out;
  switch (method) {
    case Method::kPoissonNmix: {
      FitConfig cfg = opt.fit_config;
      cfg.rank = rank;
      cfg.seed = seed;
      cfg.max_outer = opt.max_outer;
      cfg.impute_missing = opt.impute_missing;
      EarlyStopper stop(data, validation);
      const FitResult res = fit(train, features, cfg, [&](const FitProgress& pr) {
        if (pr.iteration % every != 0) return true;
        return stop.Offer(pr.iteration, PredictNmix(features, *pr.factors, *pr.detection));
      });
      const Matrix final_pred = PredictNmix(features, res.factors, res.detection);
      if (!stop.has_best() || res.n_outer % every != 0)
        stop.Offer(res.n_outer, final_pred);
      out = Collect(data, stop.best_pred(), test);
      out.iterations = stop.best_iteration();
      break;
    }
    case Method::kPoissonNmf: {
      EarlyStopper stop(data, validation);
      const PoissonNmfResult res = poisson_nmf(
          train, rank, opt.max_outer, opt.fit_config.epsilon, seed, opt.impute_missing, 0.0,
          [&](int it, const FactorModel& f) {
            if (it % every != 0) return true;
            return stop.Offer(it, f.Rates());
          });
      const Matrix final_pred = res.factors.Rates();
      if (!stop.has_best() || res.iterations % every != 0)
        stop.Offer(res.iterations, final_pred);
      out = Collect(data, stop.best_pred(), test);
      out.iterations = stop.best_iteration();
      break;
    }
    case Method::kMcCf: {
      std::optional<double> best_err;
      for (double reg : opt.mc_cf_regs) {
        EarlyStopper stop(data, validation);
        const McCfResult res = mc_cf(train, rank, reg, opt.max_outer, seed, [&](int it, const FactorModel& f) {
          if (it % every != 0) return true;
          return stop.Offer(it, f.Rates());
        });
        const Matrix final_pred = res.factors.Rates();
        if (!stop.has_best() || res.iterations % every != 0)
          stop.Offer(res.iterations, final_pred);
        const auto err = stop.best_error();
        const bool first = std::isnan(out.regularization);
        if (first || (err && (!best_err || *err < *best_err))) {
          best_err = err;
          const FoldPredictions cand = Collect(data, stop.best_pred(), test);
          out.truth = cand.truth;
          out.pred = cand.pred;
          out.iterations = stop.best_iteration();
          out.regularization = reg;
        }
      }
      break;
    }
    case Method::kTruncatedSvd: {
      out = Collect(data, truncated_svd(train, rank), test);
      break;
    }
  }
  return out;
}

inline CvRow Score(Method method, Index rank, int fold, const FoldPredictions& fp) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CvRow row{method, rank, fold, nan, nan, nan, fp.iterations, fp.regularization};
  const auto n = static_cast<Index>(fp.truth.size());
  if (n == 0) return row;
  const Eigen::Map<const Vector> truth(fp.truth.data(), n);
  const Eigen::Map<const Vector> pred(fp.pred.data(), n);
  if (truth.sum() != 0.0) row.rrmse = rrmse(Vector(truth), Vector(pred));
  std::vector<bool> labels(fp.truth.size());
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = fp.truth[k] > 0.0;
  const auto n_pos = std::count(labels.begin(), labels.end(), true);
  if (n_pos > 0 && n_pos < static_cast<long>(labels.size())) row.auroc = auroc(labels, fp.pred);
  if (n_pos > 0) row.auprc = auprc(labels, fp.pred);
  return row;
}

}  // namespace detail

/// K-fold evaluation: for fold f the test set is fold f, validation is fold f+1 (mod k),
/// and the remaining folds train. Emits one row per (method, rank, fold) plus an aggregate
/// row per (method, rank) computed from the pooled test predictions.
inline CvResult run_cv(const CountDataset& data, const FeatureSet& features, const CvOptions& opt) {
  data.Validate();
  features.Validate();
  if (features.n_rows != data.rows() || features.n_cols != data.cols())
    throw std::invalid_argument("feature layout does not match the count matrix");
  if (opt.folds < 3) throw std::invalid_argument("cross-validation needs at least three folds");
  if (opt.ranks.empty()) throw std::invalid_argument("no ranks requested");
  if (opt.methods.empty()) throw std::invalid_argument("no methods requested");
  for (Index r : opt.ranks)
    if (r < 1 || r > std::min(data.rows(), data.cols()))
      throw std::invalid_argument("rank " + std::to_string(r) + " outside [1, min(I, J)]");

  CvResult result;
  result.folds = kfold_split(data.observed, opt.folds, opt.seed);

  struct Job {
    Method method;
    Index rank;
    int fold;
  };
  std::vector<Job> jobs;
  for (Method m : opt.methods)
    for (Index r : opt.ranks)
      for (int f = 0; f < opt.folds; ++f) jobs.push_back({m, r, f});

  std::vector<detail::FoldPredictions> outputs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const Job& job = jobs[k];
      const auto fold = static_cast<std::size_t>(job.fold);
      const auto val = static_cast<std::size_t>((job.fold + 1) % opt.folds);
      const std::uint64_t seed =
          detail::SplitMix64(opt.seed ^ detail::SplitMix64(static_cast<std::uint64_t>(job.rank) * 1000003ULL + fold));
      try {
        outputs[k] = detail::RunJob(data, features, opt, job.method, job.rank, result.folds[fold],
                                    result.folds[val], seed);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(detail::ResolveThreads(opt.threads), static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t k = 0;
  for (Method m : opt.methods)
    for (Index r : opt.ranks) {
      detail::FoldPredictions pooled;
      for (int f = 0; f < opt.folds; ++f, ++k) {
        const detail::FoldPredictions& fp = outputs[k];
        result.rows.push_back(detail::Score(m, r, f, fp));
        pooled.truth.insert(pooled.truth.end(), fp.truth.begin(), fp.truth.end());
        pooled.pred.insert(pooled.pred.end(), fp.pred.begin(), fp.pred.end());
      }
      result.rows.push_back(detail::Score(m, r, -1, pooled));
    }
  return result;
}

inline std::string CvResultToCsv(const CvResult& result) {
  std::string out = "method,rank,fold,rrmse,auroc,auprc,iterations,regularization\n";
  for (const CvRow& row : result.rows) {
    out += MethodName(row.method);
    out += "," + std::to_string(row.rank);
    out += "," + (row.fold < 0 ? std::string("all") : std::to_string(row.fold + 1));
    out += "," + FormatDouble(row.rrmse);
    out += "," + FormatDouble(row.auroc);
    out += "," + FormatDouble(row.auprc);
    out += "," + (row.iterations < 0 ? std::string("NA") : std::to_string(row.iterations));
    out += "," + FormatDouble(row.regularization);
    out += '\n';
  }
  return out;
}

// File-level entry point: loads inputs, runs all folds and writes the results CSV atomically.
inline CvResult run_cv(const std::filesystem::path& counts_path, const std::filesystem::path& features_path,
                       const CvOptions& opt, const std::filesystem::path& out_path) {
  const CountDataset data = load_counts(counts_path);
  const FeatureSet features = load_features(features_path, data.rows(), data.cols(), data.observed);
  CvResult result = run_cv(data, features, opt);
  WriteFileAtomic(out_path, CvResultToCsv(result));
  return result;
}

}  // namespace nmix
