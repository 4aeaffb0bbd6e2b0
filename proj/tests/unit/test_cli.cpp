#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tba/container.hpp"
#include "unit/test_util.hpp"

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(TBA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> hash_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    out[entry.path().filename().string()] = tba::fingerprint(tba::read_file(entry.path()));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One synthetic world shared by every test: a 4-block model with a planted
// linear span over blocks 1..2 and a 3-class dataset.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new tba::test::TempDir("cli");
    const int rc = run("synth -o " + world().string() +
                       " --blocks 4 --dim 16 --heads 2 --mlp-hidden 48 --image-size 8 --patch 4"
                       " --plant linear:1:3 --classes 3 --per-class 20 --test-per-class 10");
    ASSERT_EQ(rc, 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path world() { return dir_->path() / "world"; }
  static std::string model() { return (world() / "model.ntc").string(); }
  static std::string train() { return (world() / "train.ntc").string(); }
  static std::string test() { return (world() / "test.ntc").string(); }
  static fs::path out(const std::string& name) { return dir_->path() / name; }

  // Runs the command twice into the same directory and requires identical
  // files both times.
  static std::map<std::string, std::string> deterministic(const std::string& name, const std::string& args) {
    const fs::path o = out(name);
    EXPECT_EQ(run(args + " -o " + o.string()), 0) << args;
    const auto first = hash_dir(o);
    fs::remove_all(o);
    EXPECT_EQ(run(args + " -o " + o.string()), 0) << args;
    const auto second = hash_dir(o);
    EXPECT_EQ(first, second) << args;
    EXPECT_TRUE(first.contains("run.json")) << args;
    return first;
  }

  static tba::test::TempDir* dir_;
};

tba::test::TempDir* Cli::dir_ = nullptr;

TEST_F(Cli, SynthWritesModelPlantAndSplits) {
  for (const char* f : {"model.ntc", "plant_0.ntc", "train.ntc", "test.ntc", "run.json"}) {
    EXPECT_TRUE(fs::exists(world() / f)) << f;
  }
}

TEST_F(Cli, SynthIsDeterministic) {
  const auto a = hash_dir(world());
  deterministic("synth2", "synth --blocks 4 --dim 16 --heads 2 --mlp-hidden 48 --image-size 8 --patch 4"
                          " --plant linear:1:3 --classes 3 --per-class 20 --test-per-class 10");
  const auto b = hash_dir(out("synth2"));
  EXPECT_EQ(a.at("model.ntc"), b.at("model.ntc"));
  EXPECT_EQ(a.at("train.ntc"), b.at("train.ntc"));
}

TEST_F(Cli, CaptureAndIdentify) {
  deterministic("capture", "capture --model " + model() + " --data " + train() + " --samples 16");
  const auto files = deterministic("identify", "identify --model " + model() + " --data " + train() +
                                                   " --samples 16 --top-k 3");
  EXPECT_TRUE(files.contains("sim.csv"));
  EXPECT_TRUE(files.contains("candidates.csv"));
  EXPECT_EQ(run("identify -o " + out("identify_acts").string() + " --model " + model() + " --activations " +
                (out("capture") / "activations.ntc").string()),
            0);
  EXPECT_EQ(slurp(out("identify_acts") / "sim.csv"), slurp(out("identify") / "sim.csv"));
}

TEST_F(Cli, FitTwiceGivesIdenticalContainer) {
  const std::string args = "fit --model " + model() + " --data " + train() + " --span 1:3 --samples 40";
  const auto files = deterministic("fit", args);
  ASSERT_TRUE(files.contains("approx_1_3.ntc"));
  EXPECT_NE(slurp(out("fit") / "fit.csv").find("1:3"), std::string::npos);
}

TEST_F(Cli, TrainedApproximatorsAreDeterministic) {
  deterministic("fit_mlp", "fit --model " + model() + " --data " + train() +
                               " --span 1:3 --samples 40 --approximator mlp --steps 20");
  deterministic("fit_resmlp", "fit --model " + model() + " --data " + train() +
                                  " --span 1:3 --samples 40 --approximator resmlp --steps 20");
}

TEST_F(Cli, PatchEvalPcaDriftGeneralize) {
  ASSERT_EQ(run("fit -o " + out("fit_base").string() + " --model " + model() + " --data " + train() +
                " --span 1:3 --samples 40"),
            0);
  const std::string approx = (out("fit_base") / "approx_1_3.ntc").string();
  deterministic("patch", "patch --model " + model() + " --approx " + approx + " --data " + test() +
                             " --samples 10");
  deterministic("eval", "eval --model " + model() + " --train " + train() + " --test " + test() +
                            " --approx " + approx + " --seeds 0,1 --epochs 2");
  deterministic("pca", "pca --model " + model() + " --data " + test() + " --approx " + approx + " --samples 12");
  deterministic("drift", "drift --model " + model() + " --data " + train() + " --samples 30 --eval-samples 10");
  deterministic("generalize", "generalize --model " + model() + " --fit-data " + train() + " --train " +
                                  train() + " --test " + test() + " --span 1:3 --samples 30 --seeds 0 --epochs 1");
}

// Parses compare.csv rows into method -> (fit_residual, drift).
std::map<std::string, std::pair<double, double>> compare_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::pair<double, double>> out;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    // span,s,e,method,params,params_saved,fit_residual,drift,...
    if (f.size() < 8 || f[0] == "original") continue;
    out[f[3]] = {std::stod(f[6]), std::stod(f[7])};
  }
  return out;
}

TEST_F(Cli, CompareRanksTbaAboveSkipping) {
  deterministic("compare", "compare --model " + model() + " --data " + train() +
                               " --span 1:3 --samples 40 --eval-samples 10 --methods tba,skipat,mlp --steps 20");
  const auto rows = compare_rows(out("compare") / "compare.csv");
  ASSERT_TRUE(rows.contains("tba"));
  ASSERT_TRUE(rows.contains("skipat"));
  EXPECT_LE(rows.at("tba").first, rows.at("skipat").first + 1e-9);
  EXPECT_LT(rows.at("tba").second * 10, rows.at("skipat").second);
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("fit -o " + out("bad").string() + " --model " + model() + " --data " + train() +
                " --spans 0:2,1:3"),
            2);
  EXPECT_EQ(run("fit -o " + out("bad").string() + " --model " + model() + " --data " + train() + " --span 2:2"), 2);
  EXPECT_EQ(run("capture --no-such-flag"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("identify -o " + out("bad").string() + " --model " + model() + " --data " + train() +
                " --metric euclid"),
            2);
  EXPECT_EQ(run("synth -o " + out("bad").string() + " --plant cubic:0:1"), 2);
}

TEST_F(Cli, FileErrorsExitWithThree) {
  EXPECT_EQ(run("capture -o " + out("bad").string() + " --model /nonexistent/model.ntc --data " + train()), 3);
  const fs::path junk = out("junk.ntc");
  std::ofstream(junk) << "not a container";
  EXPECT_EQ(run("capture -o " + out("bad").string() + " --model " + junk.string() + " --data " + train()), 3);
}

}  // namespace
