#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hydra/cli.hpp"

using namespace hydra;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("hydra_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const char* name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const std::vector<std::string> kTinyModel = {"--depth", "2", "--dim", "8", "--heads", "2", "--patch", "4", "--image-size", "8",
                                             "--train-size", "8", "--val-size", "4", "--batch", "4", "--steps", "3"};

}  // namespace

TEST(Cli, FlopsBaseline) {
  const auto r = run({"flops", "--size", "224", "--variant", "baseline"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("197 tokens"), std::string::npos);
  EXPECT_NE(r.out.find("attention share 4.10%"), std::string::npos);
  EXPECT_NE(r.out.find("17.4"), std::string::npos);
}

TEST(Cli, FlopsHydraZeroReplacedMatchesBaseline) {
  EXPECT_EQ(run({"flops", "--size", "224", "--variant", "hydra", "--replaced", "0"}).out,
            run({"flops", "--size", "224", "--variant", "baseline"}).out);
}

TEST(Cli, FlopsCsvToStdout) {
  const auto r = run({"flops", "--size", "224", "384", "--variant", "hydra", "--csv", "-"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("size,variant,replaced,tokens,total_macs,attention_macs,gmacs,attention_pct\n224,hydra,12,197,", 0), 0u);
  EXPECT_NE(r.out.find(",16.7365"), std::string::npos);
  EXPECT_NE(r.out.find("\n384,hydra,12,577,"), std::string::npos);
}

TEST(Cli, CheckCsvToStdoutIsPureCsv) {
  const auto r = run({"check", "--module", "flops", "--csv", "-"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("# seed=0\nmodule,check,passed\n", 0), 0u);
  EXPECT_EQ(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  auto r = run({"flops", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--variant"), std::string::npos) << "help text expected";
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"nonsense"}).code, 2);
  EXPECT_EQ(run({"flops", "--size", "225"}).code, 2);
  EXPECT_EQ(run({"flops", "--variant", "performer"}).code, 2);
  EXPECT_EQ(run({"check", "--module", "nope"}).code, 2);
  EXPECT_EQ(run({"train-toy", "--strategy", "middle"}).code, 2);
}

TEST(Cli, HelpIsSuccess) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train-toy"), std::string::npos);
}

TEST(Cli, CheckPasses) {
  const auto r = run({"check", "--module", "attention"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find(" 0 failed"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, CheckAllPasses) {
  const auto r = run({"check"});
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* m : {"tensor:", "autodiff:", "kernels:", "attention:", "flops:", "toymodel:", "bench:", "viz:"})
    EXPECT_NE(r.out.find(m), std::string::npos) << m;
}

TEST(Cli, CheckReportsBrokenHydra) {
  const auto r = run({"check", "--module", "attention", "--inject-fault", "hydra"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("FAIL attention: hydra == D single-feature heads"), std::string::npos) << r.out;
}

TEST_F(CliFiles, TrainVizRoundTrip) {
  std::vector<std::string> args = {"train-toy", "--strategy", "back", "--replace", "1", "--seed", "3", "--csv", path("loss.csv"),
                                   "--weights-out", path("model.bin")};
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  const auto t = run(args);
  ASSERT_EQ(t.code, 0) << t.err;
  const auto csv = slurp(path("loss.csv"));
  EXPECT_EQ(csv.rfind("# seed=3\n", 0), 0u);
  EXPECT_NE(csv.find("step,epoch,loss\n0,0,"), std::string::npos);
  EXPECT_NE(csv.find("# layers=msa:2:cossim,hydra:8:cossim"), std::string::npos);

  const auto img = toy::make_texture_dataset(2, 8, 2, 7).images[1];
  netpbm::write_ppm(path("in.ppm"), toy::image_to_ppm(img));
  const auto v = run({"viz", "--weights", path("model.bin"), "--image", path("in.ppm"), "--layer", "2", "--out", path("heat.pgm"),
                      "--cell", "4", "--csv", path("scores.csv")});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_NE(v.out.find("class-token self contribution"), std::string::npos);
  const auto heat = netpbm::read_pgm(path("heat.pgm"));
  EXPECT_EQ(heat.width, 8u);
  EXPECT_EQ(heat.height, 8u);
  EXPECT_NE(slurp(path("scores.csv")).find("token,row,col,score\n0,-1,-1,"), std::string::npos);

  EXPECT_EQ(run({"viz", "--weights", path("model.bin"), "--image", path("in.ppm"), "--layer", "1", "--out", path("x.pgm")}).code, 2);
  EXPECT_EQ(run({"viz", "--weights", path("missing.bin"), "--image", path("in.ppm"), "--out", path("x.pgm")}).code, 2);
}

TEST_F(CliFiles, TrainDefaultsToCsvOnStdout) {
  std::vector<std::string> args = {"train-toy", "--seed", "5"};
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  const auto r = run(args);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("# seed=5\n", 0), 0u);
  EXPECT_EQ(r.out, run(args).out);
}

TEST_F(CliFiles, TrainFromConfigFile) {
  std::ofstream(path("run.ini")) << "depth=2\ndim=8\nheads=2\npatch=4\nimage-size=8\ntrain-size=8\nval-size=4\nbatch=4\nsteps=2\n"
                                    "strategy=interleave\nreplace=1\nseed=11\n";
  const auto r = run({"train-toy", "--config", path("run.ini")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# seed=11\n", 0), 0u);
  EXPECT_NE(r.out.find("# layers=msa:2:cossim,hydra:8:cossim"), std::string::npos);
}

TEST_F(CliFiles, CommandLineBeatsConfigFile) {
  std::ofstream(path("a.ini")) << "# tiny\ndepth=2\ndim=8\nheads=2\npatch=4\nimage-size=8\ntrain-size=8\nval-size=4\nbatch=4\n"
                                  "steps=2\nseed=11\n";
  const auto r = run({"train-toy", "--config", path("a.ini"), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# seed=4\n", 0), 0u);
}

TEST_F(CliFiles, ValidationImagesFeedViz) {
  std::vector<std::string> args = {"train-toy", "--csv", path("loss.csv"), "--weights-out", path("m.bin"), "--images-out",
                                   path("imgs"), "--replace", "2"};
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  ASSERT_EQ(run(args).code, 0);
  ASSERT_TRUE(std::filesystem::exists(path("imgs/val_000_class0.ppm")) || std::filesystem::exists(path("imgs/val_000_class1.ppm")));
  std::size_t n = 0;
  std::string first;
  for (const auto& e : std::filesystem::directory_iterator(path("imgs"))) {
    ++n;
    first = e.path().string();
  }
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(run({"viz", "--weights", path("m.bin"), "--image", first, "--out", path("h.pgm")}).code, 0);
}

TEST_F(CliFiles, ConfigFileErrors) {
  std::ofstream(path("bad.ini")) << "depthh=2\n";
  EXPECT_EQ(run({"train-toy", "--config", path("bad.ini")}).code, 2);
  EXPECT_EQ(run({"train-toy", "--config", path("missing.ini")}).code, 2);
}

TEST_F(CliFiles, BenchCsv) {
  const auto r = run({"bench", "--variant", "hydra", "--t", "16:128", "--d", "8", "--csv", path("b.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(path("b.csv"));
  EXPECT_EQ(csv.rfind("# seed=0\nvariant,T,D,H,median_s,macs\nhydra,16,8,8,", 0), 0u);
  EXPECT_EQ(run({"bench", "--t", "16:32"}).code, 2);
  EXPECT_EQ(run({"bench", "--reps", "3"}).code, 2);
}
