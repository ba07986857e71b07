// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Tolerances and problem sizes are fixed here and must not be relaxed to make a run pass.

#include "nmix/nmix.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace nmix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Problem {
  CountDataset data;
  FeatureSet features;
  SyntheticInstance truth;
};

Problem Synthetic(Index n, Index rank, Index n_features, double gamma, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_rows = n;
  sc.n_cols = n;
  sc.rank = rank;
  sc.n_features = n_features;
  sc.gamma = gamma;
  sc.seed = seed;
  Problem pr;
  pr.truth = generate_instance(sc);
  pr.data = sample_network(pr.truth.factors, pr.truth.detection, seed + 1).second;
  pr.features = pr.truth.features;
  return pr;
}

// 1. Collapsed likelihood against the truncated mixture sum.
Outcome MixtureIdentity() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (int y = 0; y <= 10; ++y)
    for (double lambda : {0.1, 1.0, 5.0, 20.0})
      for (double p : {0.05, 0.5, 0.95})
        worst = std::max(worst, std::abs(truncated_mixture_sum(y, lambda, p, 500) -
                                         std::exp(collapsed_loglik(y, lambda, p))));
  const double t = Seconds(start);
  std::ostringstream os;
  os << "max abs diff " << worst << " (tol 1e-10), " << t << " s (limit 1 s)";
  return {worst <= 1e-10 && t < 1.0, os.str()};
}

// 2. Closed-form p update against golden-section search.
Outcome ClosedFormPUpdate() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> count(0, 20);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double y = count(rng);
    const double lambda = 10.0 * (1.0 - unit(rng));  // (0, 10]
    const double p_bar = -1.0 + 3.0 * unit(rng);     // [-1, 2]
    const double rho = 5.0 * (1.0 - unit(rng));      // (0, 5]
    const double got = p_update(Vector::Constant(1, y), Vector::Constant(1, lambda),
                                Vector::Constant(1, p_bar), rho)(0);
    const double ref = oracle::golden_section(
        [&](double p) { return oracle::p_objective(p, y, lambda, p_bar, rho); }, 1e-12, 1.0);
    worst = std::max(worst, std::abs(got - ref));
  }
  const double t = Seconds(start);
  std::ostringstream os;
  os << "max abs diff " << worst << " (tol 1e-6), " << t << " s (limit 1 s)";
  return {worst <= 1e-6 && t < 1.0, os.str()};
}

// 3. ADMM against an interior-point reference on the detection subproblem.
Outcome AdmmOptimality() {
  double admm_seconds = 0.0;
  double worst_rel = 0.0;
  double worst_primal = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Problem pr = Synthetic(20, 4, 4, 3.0, 300 + seed);
    std::mt19937_64 rng(seed);
    const FactorModel f = RandomFactors(20, 20, 4, rng);
    const Matrix lambda = pr.truth.factors.Rates() + f.Rates();
    const Vector warm = Vector::Constant(4, 0.5) * (0.9 / (pr.features.z * Vector::Constant(4, 0.5)).maxCoeff());
    FitConfig cfg;
    cfg.admm_tol = 1e-8;
    cfg.admm_max_iter = 100000;
    const auto t0 = Clock::now();
    const AlphaSolution sol = solve_alpha_admm(pr.data, lambda, pr.features, cfg, warm);
    admm_seconds += Seconds(t0);

    const AlphaSolver solver(pr.data.observed, pr.features);
    const Vector y = solver.GatherCounts(pr.data);
    const Vector lam = solver.Gather(lambda);
    // Strictly interior start for the barrier method: max z alpha = 0.5.
    const auto ref = oracle::barrier_reference(solver.design(), y, lam, warm * (0.5 / 0.9));
    const double got = alpha_subproblem_objective(y, lam, solver.Gather(sol.p));
    worst_rel = std::max(worst_rel, std::abs(got - ref.objective) / std::abs(ref.objective));
    worst_primal = std::max(worst_primal, sol.diagnostics.primal_residual);
  }
  std::ostringstream os;
  os << "max rel objective gap " << worst_rel << " (tol 1e-4), max primal residual " << worst_primal
     << " (tol 1e-6), ADMM " << admm_seconds << " s (limit 10 s)";
  return {worst_rel <= 1e-4 && worst_primal <= 1e-6 && admm_seconds < 10.0, os.str()};
}

// 4. Outer-loop objective is non-increasing.
Outcome Monotonicity() {
  const auto start = Clock::now();
  double worst_rise = -std::numeric_limits<double>::infinity();
  std::size_t shortest = std::numeric_limits<std::size_t>::max();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem pr = Synthetic(30, 5, 3, 5.0, 400 + seed);
    FitConfig cfg;
    cfg.rank = 5;
    cfg.max_outer = 200;
    cfg.outer_tol = 1e-300;
    cfg.seed = seed;
    const FitResult res = fit(pr.data, pr.features, cfg);
    shortest = std::min(shortest, res.objective_trace.size());
    for (std::size_t k = 1; k < res.objective_trace.size(); ++k)
      worst_rise = std::max(worst_rise, res.objective_trace[k] - res.objective_trace[k - 1]);
  }
  const double t = Seconds(start);
  std::ostringstream os;
  os << "largest increase " << worst_rise << " (slack 1e-8), shortest trace " << shortest - 1
     << " iterations, " << t << " s (limit 120 s)";
  return {worst_rise <= 1e-8 && shortest == 201 && t < 120.0, os.str()};
}

// 5. Synthetic recovery versus Poisson NMF.
Outcome SyntheticRecovery() {
  const auto start = Clock::now();
  std::vector<double> ours, baseline, alpha_final, alpha_init;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Problem pr = Synthetic(50, 15, 8, 15.0, 500 + seed);
    FitConfig cfg;
    cfg.rank = 15;
    cfg.max_outer = 100;
    cfg.outer_tol = 1e-300;
    cfg.seed = 1000 + seed;
    const FitResult res = fit(pr.data, pr.features, cfg);
    FitConfig init_cfg = cfg;
    init_cfg.max_outer = 0;
    const FitResult init = fit(pr.data, pr.features, init_cfg);
    const PoissonNmfResult nmf = poisson_nmf(pr.data, 15, 100, cfg.epsilon, cfg.seed);
    const auto avg = [&](const FactorModel& f) {
      return 0.5 * (factor_mse(pr.truth.factors.u, f.u) + factor_mse(pr.truth.factors.v, f.v));
    };
    ours.push_back(avg(res.factors));
    baseline.push_back(avg(nmf.factors));
    alpha_final.push_back(alpha_mse(pr.truth.alpha, res.detection.alpha));
    alpha_init.push_back(alpha_mse(pr.truth.alpha, init.detection.alpha));
  }
  const double t = Seconds(start);
  const double factor_ratio = Median(ours) / Median(baseline);
  const double alpha_ratio = Median(alpha_final) / Median(alpha_init);
  std::ostringstream os;
  os << "median factor MSE " << Median(ours) << " vs Poisson NMF " << Median(baseline) << " (ratio "
     << factor_ratio << ", need <= 0.5); median alpha MSE " << Median(alpha_final) << " vs init "
     << Median(alpha_init) << " (ratio " << alpha_ratio << ", need <= 0.1); " << t << " s (limit 600 s)";
  return {factor_ratio <= 0.5 && alpha_ratio <= 0.1 && t < 600.0, os.str()};
}

// 6. Analytic gradient against central differences.
Outcome Gradient() {
  double worst = 0.0;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Problem pr = Synthetic(10, 3, 3, 3.0, 600 + trial);
    pr.features.z.array() = 0.2 + 0.8 * pr.features.z.array();
    FactorModel f = RandomFactors(10, 10, 3, rng);
    f.u.array() += 0.05;
    f.v.array() += 0.05;
    Vector alpha(3);
    for (Index k = 0; k < 3; ++k) alpha(k) = 0.1 + unit(rng);
    alpha *= 0.85 / (pr.features.z * alpha).maxCoeff();
    const DetectionModel d{alpha, DetectionFromAlpha(pr.features, alpha)};
    worst = std::max(worst, gradient_check(pr.data, pr.features, f, d, 1e-5));
  }
  std::ostringstream os;
  os << "max relative error " << worst << " (tol 1e-4)";
  return {worst <= 1e-4, os.str()};
}

// 7. Ranking and alignment metrics against brute force.
Outcome MetricOracles() {
  std::mt19937_64 rng(7);
  int auroc_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + std::uniform_int_distribution<std::size_t>(0, 198)(rng);
    std::vector<bool> labels(n);
    std::vector<double> scores(n);
    std::uniform_int_distribution<int> coarse(0, 4);
    std::uniform_real_distribution<double> fine(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      labels[k] = fine(rng) < 0.4;
      scores[k] = trial % 2 == 0 ? coarse(rng) : fine(rng);
    }
    labels[0] = true;
    labels[1] = false;
    if (auroc(labels, scores) != oracle::pairwise_auroc(labels, scores)) ++auroc_mismatch;
  }
  int mse_mismatch = 0;
  std::uniform_real_distribution<double> pos(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Index f = 1 + trial % 6;
    Matrix a(12, f), b(12, f);
    for (Index k = 0; k < a.size(); ++k) a.data()[k] = pos(rng);
    for (Index k = 0; k < b.size(); ++k) b.data()[k] = pos(rng);
    if (factor_mse(a, b, AlignMethod::kHungarian) != factor_mse(a, b, AlignMethod::kExhaustive)) ++mse_mismatch;
  }
  std::ostringstream os;
  os << "auroc mismatches " << auroc_mismatch << "/100, assignment mismatches " << mse_mismatch << "/50";
  return {auroc_mismatch == 0 && mse_mismatch == 0, os.str()};
}

// 8. Unit detection held fixed reduces the fit to Poisson NMF.
Outcome SpecialCase() {
  double worst = 0.0;
  bool lengths_ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Problem pr = Synthetic(20, 4, 1, 3.0, 800 + seed);
    FitConfig cfg;
    cfg.rank = 4;
    cfg.max_outer = 100;
    cfg.outer_tol = 1e-300;
    cfg.seed = seed;
    cfg.fixed_alpha = Vector::Ones(1);
    const FitResult res = fit(pr.data, FeatureSet::Constant(20, 20), cfg);
    const PoissonNmfResult base = poisson_nmf(pr.data, 4, 100, cfg.epsilon, seed);
    if (res.objective_trace.size() != 101 || base.objective_trace.size() != 101) {
      lengths_ok = false;
      continue;
    }
    for (std::size_t k = 0; k < 101; ++k)
      worst = std::max(worst, std::abs(res.objective_trace[k] - base.objective_trace[k]));
  }
  std::ostringstream os;
  os << "max per-iteration objective difference " << worst << " (tol 1e-9)";
  return {lengths_ok && worst <= 1e-9, os.str()};
}

// 9. Detection solve at the synthetic-study size.
Outcome AdmmRuntime() {
  const Problem pr = Synthetic(50, 8, 8, 15.0, 900);
  std::mt19937_64 rng(9);
  const FactorModel f = RandomFactors(50, 50, 8, rng);
  const Vector warm = Vector::Constant(8, 0.5) * (0.9 / (pr.features.z * Vector::Constant(8, 0.5)).maxCoeff());
  const FitConfig cfg;
  const auto start = Clock::now();
  const AlphaSolution sol = solve_alpha_admm(pr.data, f.Rates() * 15.0, pr.features, cfg, warm);
  const double t = Seconds(start);
  std::ostringstream os;
  os << sol.diagnostics.iterations << " ADMM iterations, " << t << " s (limit 1 s)";
  return {t < 1.0 && sol.alpha.allFinite(), os.str()};
}

// 10. Cross-validation end to end through the command-line tool.
Outcome CrossValidation() {
  const fs::path dir = fs::temp_directory_path() / ("nmix_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Problem pr = Synthetic(20, 3, 3, 3.0, 1000);
  // Some pairs were never observed.
  for (Index k = 0; k < 20; k += 3) {
    pr.data.observed(k, (k * 7) % 20) = false;
    pr.data.counts(k, (k * 7) % 20) = 0;
  }
  WriteFileAtomic(dir / "counts.csv", CountsToCsv(pr.data));
  WriteFileAtomic(dir / "features.csv", FeaturesToCsv(pr.features));
  const std::string base = std::string(NMIX_CLI_PATH) + " cv --counts " + (dir / "counts.csv").string() +
                           " --features " + (dir / "features.csv").string() +
                           " --ranks 2,3 --folds 5 --max-outer 60 --seed 11 --out ";
  const int rc1 = std::system((base + (dir / "a.csv").string() + " 2>/dev/null").c_str());
  const int rc2 = std::system((base + (dir / "b.csv").string() + " 2>/dev/null").c_str());
  bool ok = rc1 == 0 && rc2 == 0;
  std::string a, b;
  if (ok) {
    a = ReadFile(dir / "a.csv");
    b = ReadFile(dir / "b.csv");
  }
  const bool identical = ok && a == b;
  int aggregates = 0;
  bool metrics_present = true;
  if (ok) {
    std::istringstream in(a);
    std::string line;
    std::getline(in, line);
    ok = line == "method,rank,fold,rrmse,auroc,auprc,iterations,regularization";
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      if (cells.size() < 6) {
        metrics_present = false;
        continue;
      }
      if (cells[2] == "all") {
        ++aggregates;
        for (int k = 3; k <= 5; ++k)
          if (cells[static_cast<std::size_t>(k)] == "NA") metrics_present = false;
      }
    }
    for (const char* m : {"pois_nmix,", "pois_nmf,", "mc_cf,", "trunc_svd,"})
      if (a.find(std::string("\n") + m) == std::string::npos) ok = false;
  }
  fs::remove_all(dir);
  std::ostringstream os;
  os << "exit codes " << rc1 << "/" << rc2 << ", byte-identical " << (identical ? "yes" : "no") << ", "
     << aggregates << " aggregate rows (need 8), metrics present " << (metrics_present ? "yes" : "no");
  return {ok && identical && aggregates == 8 && metrics_present, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"collapsed likelihood equals truncated mixture sum", MixtureIdentity},
      {"closed-form p update equals scalar minimizer", ClosedFormPUpdate},
      {"ADMM reaches the detection-subproblem optimum", AdmmOptimality},
      {"outer objective trace non-increasing", Monotonicity},
      {"synthetic recovery beats Poisson NMF", SyntheticRecovery},
      {"analytic gradient matches finite differences", Gradient},
      {"metric oracles", MetricOracles},
      {"frozen unit detection reproduces Poisson NMF", SpecialCase},
      {"detection solve at 50x50, R=8 under 1 s", AdmmRuntime},
      {"cross-validation end to end, deterministic", CrossValidation},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2zu. %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
