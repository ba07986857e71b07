// nmix: simulate, fit, predict, evaluate and cross-validate Poisson N-mixture factorizations.

#include "nmix/nmix.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace nmix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

struct SimulateArgs {
  SynthConfig synth;
  double constant_p = -1.0;
  fs::path out;
};

struct FitArgs {
  fs::path counts, features, out, trace;
  FitConfig config;
};

struct PredictArgs {
  fs::path model, out;
};

struct EvalArgs {
  fs::path truth_u, truth_v, truth_alpha, model;
};

struct CvArgs {
  fs::path counts, features, out;
  std::vector<Index> ranks{2, 5, 10, 20, 40};
  int folds = 10;
  std::vector<std::string> methods;
  std::uint64_t seed = 0;
  int max_outer = 500;
  bool impute_missing = false;
};

void Simulate(const SimulateArgs& a) {
  SynthConfig cfg = a.synth;
  if (a.constant_p >= 0.0) cfg.constant_p = a.constant_p;
  const SyntheticInstance inst = generate_instance(cfg);
  auto [latent, data] = sample_network(inst.factors, inst.detection, cfg.seed + 1);
  fs::create_directories(a.out);
  WriteFileAtomic(a.out / "counts.csv", CountsToCsv(data));
  WriteFileAtomic(a.out / "features.csv", FeaturesToCsv(inst.features));
  WriteFileAtomic(a.out / "truth_u.csv", MatrixToCsv(inst.factors.u));
  WriteFileAtomic(a.out / "truth_v.csv", MatrixToCsv(inst.factors.v));
  WriteFileAtomic(a.out / "truth_alpha.csv", MatrixToCsv(Matrix(inst.alpha)));
  WriteFileAtomic(a.out / "latent_counts.csv", MatrixToCsv(latent.counts.cast<double>()));
  WriteFileAtomic(a.out / "detection.csv", MatrixToCsv(inst.detection.p));
}

void Fit(const FitArgs& a) {
  const CountDataset data = load_counts(a.counts);
  const FeatureSet features = load_features(a.features, data.rows(), data.cols(), data.observed);
  const FitResult res = fit(data, features, a.config);
  save_model(a.out, MakeModelFile(res, features));
  if (!a.trace.empty()) {
    std::string csv = "iteration,objective\n";
    for (std::size_t t = 0; t < res.objective_trace.size(); ++t)
      csv += std::to_string(t) + "," + FormatDouble(res.objective_trace[t]) + "\n";
    WriteFileAtomic(a.trace, csv);
  }
  std::cerr << "fit: " << res.n_outer << " outer iterations, objective "
            << FormatDouble(res.objective_trace.back()) << (res.converged ? ", converged" : ", not converged")
            << "\n";
}

void Predict(const PredictArgs& a) {
  const ModelFile model = load_model(a.model);
  fs::create_directories(a.out);
  WriteFileAtomic(a.out / "y_hat.csv", MatrixToCsv(model.PredictCounts()));
  WriteFileAtomic(a.out / "lambda_hat.csv", MatrixToCsv(model.LambdaHat()));
}

void Eval(const EvalArgs& a) {
  const ModelFile model = load_model(a.model);
  const Matrix u = load_matrix_csv(a.truth_u);
  const Matrix v = load_matrix_csv(a.truth_v);
  const Matrix alpha = load_matrix_csv(a.truth_alpha);
  if (alpha.cols() != 1) throw ParseError("truth alpha must be a single column");
  std::cout << "u_mse," << FormatDouble(factor_mse(u, model.factors.u)) << "\n";
  std::cout << "v_mse," << FormatDouble(factor_mse(v, model.factors.v)) << "\n";
  std::cout << "alpha_mse," << FormatDouble(alpha_mse(alpha.col(0), model.alpha)) << "\n";
}

void Cv(const CvArgs& a) {
  CvOptions opt;
  opt.ranks = a.ranks;
  opt.folds = a.folds;
  opt.seed = a.seed;
  opt.max_outer = a.max_outer;
  opt.impute_missing = a.impute_missing;
  if (!a.methods.empty()) {
    opt.methods.clear();
    for (const std::string& m : a.methods) opt.methods.push_back(ParseMethod(m));
  }
  run_cv(a.counts, a.features, opt, a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisson N-mixture matrix factorization for count networks with imperfect detection"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "draw a synthetic instance and write it as CSVs");
  simulate->add_option("--rows", sim.synth.n_rows, "I")->capture_default_str();
  simulate->add_option("--cols", sim.synth.n_cols, "J")->capture_default_str();
  simulate->add_option("--rank", sim.synth.rank, "F")->capture_default_str();
  simulate->add_option("--features", sim.synth.n_features, "R")->capture_default_str();
  simulate->add_option("--gamma", sim.synth.gamma, "factor scale")->capture_default_str();
  simulate->add_option("--max-p", sim.synth.target_max_p, "largest detection probability")->capture_default_str();
  simulate->add_option("--seed", sim.synth.seed)->capture_default_str();
  simulate->add_option("--constant-p", sim.constant_p, "use one constant detection probability instead of features");
  simulate->add_option("--out", sim.out, "output directory")->required();

  FitArgs fa;
  auto* fitcmd = app.add_subcommand("fit", "fit the model to a counts CSV and features CSV");
  fitcmd->add_option("--counts", fa.counts)->required()->check(CLI::ExistingFile);
  fitcmd->add_option("--features", fa.features)->required()->check(CLI::ExistingFile);
  fitcmd->add_option("--rank", fa.config.rank)->capture_default_str();
  fitcmd->add_option("--rho", fa.config.rho, "ADMM penalty")->capture_default_str();
  fitcmd->add_option("--max-outer", fa.config.max_outer)->capture_default_str();
  fitcmd->add_option("--tol", fa.config.outer_tol, "relative objective change to stop")->capture_default_str();
  fitcmd->add_option("--admm-tol", fa.config.admm_tol)->capture_default_str();
  fitcmd->add_option("--admm-max-iter", fa.config.admm_max_iter)->capture_default_str();
  fitcmd->add_option("--epsilon", fa.config.epsilon)->capture_default_str();
  fitcmd->add_flag("--impute-missing", fa.config.impute_missing, "fill unobserved entries with the current rate");
  fitcmd->add_option("--seed", fa.config.seed)->capture_default_str();
  fitcmd->add_option("--out", fa.out, "model file (JSON)")->required();
  fitcmd->add_option("--trace", fa.trace, "optional objective trace CSV");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "write y_hat.csv and lambda_hat.csv from a model");
  predict->add_option("--model", pa.model)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", pa.out, "output directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "compare a model against ground truth");
  eval->add_option("--truth-u", ea.truth_u)->required()->check(CLI::ExistingFile);
  eval->add_option("--truth-v", ea.truth_v)->required()->check(CLI::ExistingFile);
  eval->add_option("--truth-alpha", ea.truth_alpha)->required()->check(CLI::ExistingFile);
  eval->add_option("--model", ea.model)->required()->check(CLI::ExistingFile);

  CvArgs ca;
  auto* cv = app.add_subcommand("cv", "k-fold evaluation of the model and baselines");
  cv->add_option("--counts", ca.counts)->required()->check(CLI::ExistingFile);
  cv->add_option("--features", ca.features)->required()->check(CLI::ExistingFile);
  cv->add_option("--ranks", ca.ranks, "comma separated")->delimiter(',')->capture_default_str();
  cv->add_option("--folds", ca.folds)->capture_default_str();
  cv->add_option("--method", ca.methods, "pois_nmix, pois_nmf, mc_cf, trunc_svd (default all)")->delimiter(',');
  cv->add_option("--seed", ca.seed)->capture_default_str();
  cv->add_option("--max-outer", ca.max_outer)->capture_default_str();
  cv->add_flag("--impute-missing", ca.impute_missing);
  cv->add_option("--out", ca.out, "results CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*simulate) Simulate(sim);
    else if (*fitcmd) Fit(fa);
    else if (*predict) Predict(pa);
    else if (*eval) Eval(ea);
    else if (*cv) Cv(ca);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
