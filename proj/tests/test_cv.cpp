#include "nmix/cv.hpp"
#include "nmix/synthgen.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace nmix;
namespace fs = std::filesystem;

namespace {

struct Problem {
  CountDataset data;
  FeatureSet features;
};

Problem Synthetic(std::uint64_t seed) {
  SynthConfig sc;
  sc.n_rows = 20;
  sc.n_cols = 20;
  sc.rank = 3;
  sc.n_features = 3;
  sc.gamma = 3.0;
  sc.seed = seed;
  const SyntheticInstance inst = generate_instance(sc);
  return {sample_network(inst.factors, inst.detection, seed + 1).second, inst.features};
}

CvOptions SmallOptions() {
  CvOptions opt;
  opt.ranks = {3};
  opt.folds = 5;
  opt.seed = 4;
  opt.max_outer = 60;
  return opt;
}

}  // namespace

TEST(RunCv, EmitsRowsForEveryMethodRankAndFold) {
  const Problem pr = Synthetic(1);
  CvOptions opt = SmallOptions();
  opt.ranks = {2, 3};
  const CvResult res = run_cv(pr.data, pr.features, opt);
  EXPECT_EQ(res.rows.size(), 4u * 2u * 6u);
  for (Method m : AllMethods())
    for (Index r : {2, 3}) {
      const CvRow* agg = res.Aggregate(m, r);
      ASSERT_NE(agg, nullptr);
      EXPECT_GE(agg->rrmse, 0.0);
      EXPECT_GE(agg->auroc, 0.0);
      EXPECT_LE(agg->auroc, 1.0);
      EXPECT_GE(agg->auprc, 0.0);
      EXPECT_LE(agg->auprc, 1.0);
    }
  const std::string csv = CvResultToCsv(res);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,rank,fold,rrmse,auroc,auprc,iterations,regularization");
  EXPECT_NE(csv.find("mc_cf,3,all,"), std::string::npos);
}

TEST(RunCv, TestFoldsCoverEachObservedEntryOnce) {
  Problem pr = Synthetic(2);
  pr.data.observed(0, 0) = false;
  const CvResult res = run_cv(pr.data, pr.features, SmallOptions());
  std::set<Position> seen;
  std::size_t total = 0;
  for (const auto& f : res.folds) {
    total += f.size();
    seen.insert(f.begin(), f.end());
  }
  EXPECT_EQ(total, static_cast<std::size_t>(pr.data.n_observed()));
  EXPECT_EQ(seen.size(), total);
  EXPECT_EQ(seen.count(Position{0, 0}), 0u);
}

TEST(RunCv, DeterministicAcrossThreadCounts) {
  const Problem pr = Synthetic(3);
  CvOptions opt = SmallOptions();
  opt.threads = 1;
  const std::string a = CvResultToCsv(run_cv(pr.data, pr.features, opt));
  opt.threads = 3;
  const std::string b = CvResultToCsv(run_cv(pr.data, pr.features, opt));
  EXPECT_EQ(a, b);
}

TEST(RunCv, ProposedRanksAtLeastAsWellAsTruncatedSvd) {
  const Problem pr = Synthetic(5);
  CvOptions opt = SmallOptions();
  opt.methods = {Method::kPoissonNmix, Method::kTruncatedSvd};
  const CvResult res = run_cv(pr.data, pr.features, opt);
  EXPECT_GE(res.Aggregate(Method::kPoissonNmix, 3)->auroc, res.Aggregate(Method::kTruncatedSvd, 3)->auroc);
}

TEST(RunCv, McCfRecordsChosenRegularization) {
  const Problem pr = Synthetic(6);
  CvOptions opt = SmallOptions();
  opt.methods = {Method::kMcCf};
  const CvResult res = run_cv(pr.data, pr.features, opt);
  for (const CvRow& row : res.rows) {
    if (row.fold < 0) continue;
    EXPECT_TRUE(row.regularization == 0.01 || row.regularization == 0.1 || row.regularization == 1.0);
  }
}

TEST(RunCv, FileEntryPointWritesIdenticalCsv) {
  const Problem pr = Synthetic(7);
  const fs::path dir = fs::temp_directory_path() / ("nmix_cv_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  WriteFileAtomic(dir / "counts.csv", CountsToCsv(pr.data));
  WriteFileAtomic(dir / "features.csv", FeaturesToCsv(pr.features));
  CvOptions opt = SmallOptions();
  opt.methods = {Method::kPoissonNmf, Method::kTruncatedSvd};
  run_cv(dir / "counts.csv", dir / "features.csv", opt, dir / "a.csv");
  run_cv(dir / "counts.csv", dir / "features.csv", opt, dir / "b.csv");
  EXPECT_EQ(ReadFile(dir / "a.csv"), ReadFile(dir / "b.csv"));
  const std::string cli = std::string(NMIX_CLI_PATH) + " cv --counts " + (dir / "counts.csv").string() +
                          " --features " + (dir / "features.csv").string() +
                          " --ranks 2 --folds 4 --method pois_nmix,trunc_svd --max-outer 20 --seed 1 --out ";
  ASSERT_EQ(std::system((cli + (dir / "c1.csv").string()).c_str()), 0);
  ASSERT_EQ(std::system((cli + (dir / "c2.csv").string()).c_str()), 0);
  EXPECT_EQ(ReadFile(dir / "c1.csv"), ReadFile(dir / "c2.csv"));
  fs::remove_all(dir);
}

TEST(RunCv, RejectsBadOptions) {
  const Problem pr = Synthetic(8);
  CvOptions opt = SmallOptions();
  opt.folds = 2;
  EXPECT_THROW(run_cv(pr.data, pr.features, opt), std::invalid_argument);
  opt = SmallOptions();
  opt.ranks = {50};
  EXPECT_THROW(run_cv(pr.data, pr.features, opt), std::invalid_argument);
  EXPECT_THROW(ParseMethod("nope"), std::invalid_argument);
}
