#include <filesystem>
#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "selfdistill/cli.hpp"

namespace fs = std::filesystem;
using selfdistill::cli::run_cli;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const char* kTinyConfig =
    "image.width = 16\nimage.height = 16\nscales = 4x4,2x2\nmodel.backbone_channels = 2\nmodel.head_hidden = 3\n"
    "dataset.train_count = 6\ndataset.eval_count = 3\ndataset.max_object_size = 8\n"
    "lr.decay_start_step = 4\nlr.decay_interval = 2\nlr.end_step = 6\n"
    "lambda.warmup_end_step = 2\nlambda.switch_step = 4\nlambda.lambda1 = 2\nlambda.lambda2 = 3\n"
    "phase.freeze_end_step = 2\ntotal_steps = 6\nbatch_size = 2\neval_interval = 3\n";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("selfdistill_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.conf") << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, MissingConfigNamesPath) {
  const auto r = run({"train", "--config", path("absent.conf")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("absent.conf"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownSubcommandAndFlagAreValidationErrors) {
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, TrainWritesArtifacts) {
  const auto r = run({"train", "--config", path("tiny.conf"), "--out", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ap,ap50,ap75,aps,apm,apl"), std::string::npos);
  for (const char* f : {"runlog.csv", "report.csv", "config.txt", "checkpoint.bin", "metadata.txt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const auto log = read(dir_ / "run" / "runlog.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "step,lr,lambda,l_det,l_distill,ratio,ap_surrogate");
  EXPECT_EQ(count_lines(log), 7u);
  EXPECT_NE(read(dir_ / "run" / "metadata.txt").find("isa = "), std::string::npos);
}

TEST_F(CliTest, ZeroLambdaOverrideMatchesBaselineDetectionLoss) {
  ASSERT_EQ(run({"train", "--config", path("tiny.conf"), "--out", path("zero"), "--set", "lambda.lambda1=0", "--set",
                 "lambda.lambda2=0"})
                .code,
            0);
  ASSERT_EQ(run({"train", "--config", path("tiny.conf"), "--out", path("base"), "--set", "distillation=false"}).code, 0);
  auto l_det_column = [](const std::string& csv) {
    std::vector<std::string> col;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      col.push_back(cells.at(3));
    }
    return col;
  };
  EXPECT_EQ(l_det_column(read(dir_ / "zero" / "runlog.csv")), l_det_column(read(dir_ / "base" / "runlog.csv")));
}

TEST_F(CliTest, DivergenceExitsTwoAndKeepsPartialLog) {
  const auto r = run({"train", "--config", path("tiny.conf"), "--out", path("boom"), "--set", "lr.base_rate=1e200"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "boom" / "runlog.csv"));
}

TEST_F(CliTest, BadOverrideIsValidationError) {
  const auto r = run({"train", "--config", path("tiny.conf"), "--set", "temperature=hot"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("temperature"), std::string::npos);
}

TEST_F(CliTest, AnalyticCalibration) {
  const auto r = run({"calibrate", "--analytic", "--tolerance", "1e-6", "--max-probes", "60", "--out", path("cal")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto at = r.out.find("lambda_star = ");
  ASSERT_NE(at, std::string::npos);
  EXPECT_NEAR(std::stod(r.out.substr(at + 14)), 0.45 / (0.55 * 0.1), 1e-3);
  EXPECT_NE(r.out.find("converged = true"), std::string::npos);
  const auto trace = read(dir_ / "cal" / "calibration.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "lambda,ratio,lo,hi");
}

TEST_F(CliTest, CalibrationArgumentErrors) {
  EXPECT_EQ(run({"calibrate", "--analytic", "--target", "0"}).code, 1);
  EXPECT_EQ(run({"calibrate", "--analytic", "--lo", "5", "--hi", "2"}).code, 1);
  const auto r = run({"calibrate", "--analytic", "--lo", "50", "--hi", "100"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("not bracketed"), std::string::npos);
}

TEST_F(CliTest, TrainingCalibrationRuns) {
  const auto r = run({"calibrate", "--config", path("tiny.conf"), "--iters", "3", "--lo", "0.001", "--hi", "1e6",
                      "--max-probes", "4", "--tolerance", "0.3", "--out", path("tc")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("probes_used = "), std::string::npos);
}

TEST_F(CliTest, Gradcheck) {
  const auto ok = run({"gradcheck", "--loss", "mse", "--trials", "5", "--sizes", "4x4,2x2"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("max_relative_error"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--loss", "huber"}).code, 1);
  EXPECT_EQ(run({"gradcheck", "--sizes", "0x3"}).code, 1);
  const auto breach = run({"gradcheck", "--loss", "js", "--trials", "3", "--sizes", "4x4", "--threshold", "1e-300"});
  EXPECT_EQ(breach.code, 2);
  EXPECT_NE(breach.err.find("worst trial"), std::string::npos);
}

TEST_F(CliTest, CompareShape) {
  std::ofstream(dir_ / "cmp.spec") << "include = tiny.conf\nseeds = 1,2,3,4,5\n"
                                   << "[variant stepwise]\n[variant twin]\n[variant baseline]\ndistillation = false\n";
  const auto r = run({"compare", "--spec", path("cmp.spec"), "--out", path("cmp"), "--jobs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read(dir_ / "cmp" / "comparison.csv");
  EXPECT_EQ(csv, r.out);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,seed,status,ap,ap50,ap75,aps,apm,apl,final_ap,rank,seed_winner");
  std::map<std::string, std::vector<std::string>> rows;
  std::size_t data_rows = 0;
  while (std::getline(in, line) && !line.empty()) {
    ++data_rows;
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const auto key = line.substr(0, first);
    rows[key].push_back(line.substr(second + 1));
  }
  EXPECT_EQ(data_rows, 15u);
  // Identical variants train on identical data with identical seeds.
  ASSERT_EQ(rows["stepwise"].size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    auto strip_winner = [](const std::string& s) { return s.substr(0, s.rfind(',')); };
    EXPECT_EQ(strip_winner(rows["stepwise"][i]), strip_winner(rows["twin"][i]));
  }
  std::getline(in, line);
  EXPECT_EQ(line, "variant,mean_final_ap,seeds_won,diverged");
  std::size_t summary = 0;
  while (std::getline(in, line) && line.rfind("majority_winner", 0) != 0) ++summary;
  EXPECT_EQ(summary, 3u);
  EXPECT_EQ(line.rfind("majority_winner,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir_ / "cmp" / "twin" / "seed_3" / "runlog.csv"));
}

TEST_F(CliTest, CompareRequiresSpec) {
  EXPECT_EQ(run({"compare"}).code, 1);
  EXPECT_EQ(run({"compare", "--spec", path("none.spec")}).code, 1);
}

}  // namespace
