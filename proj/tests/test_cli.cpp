#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "json.hpp"
#include "afci/binary_io.hpp"
#include "afci/config.hpp"
#include "afci/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() {
    static const auto d = fs::temp_directory_path() / ("afci_cli_test_" + std::to_string(::getpid()));
    return d;
  }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    std::ofstream(dir() / "small.json") << R"({
      "profiles": [{"profile_id": "p", "switching_freq": 20000, "noise_floor": 0.01,
                    "harmonics": [{"multiple": 1, "amplitude": 0.05}]}],
      "suite": {"trace_duration": 0.2, "arc_conditions": 4},
      "train": {"epochs": 2, "folds": 2}
    })";
  }

  static Result run(const std::string& args) {
    const auto o = dir() / "stdout.txt", e = dir() / "stderr.txt";
    const auto cmd = "cd '" + dir().string() + "' && '" AFCI_CLI_PATH "' " + args + " > '" + o.string() + "' 2> '" +
                     e.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
  }

  static void TearDownTestSuite() { fs::remove_all(dir()); }

  static Result small(const std::string& args) { return run("-c small.json " + args); }
};

TEST_F(Cli, SynthIsReproducibleFromSeedAndManifest) {
  ASSERT_EQ(small("synth -o s1").code, 0);
  ASSERT_EQ(small("synth -o s2").code, 0);
  const auto m1 = slurp(dir() / "s1/manifest.json");
  EXPECT_EQ(m1, slurp(dir() / "s2/manifest.json"));
  const auto j = json::parse(m1);
  // One profile: every nuisance sub-condition plus the four arc conditions.
  EXPECT_EQ(j.at("summary").at("nuisance_traces"), 35);
  EXPECT_EQ(j.at("summary").at("arc_traces"), 4);
  // The run manifest alone regenerates the same artifacts.
  const auto rm = json::parse(slurp(dir() / "s1/run_manifest.json"));
  EXPECT_EQ(rm.at("config_hash"), afci::config_hash(rm.at("config")));
  std::ofstream(dir() / "replay.json") << rm.at("config").dump();
  ASSERT_EQ(run("-c replay.json synth -o s3").code, 0);
  EXPECT_EQ(m1, slurp(dir() / "s3/manifest.json"));
  EXPECT_EQ(slurp(dir() / "s1/traces/p_arc_0_r0.afci").size(), slurp(dir() / "s3/traces/p_arc_0_r0.afci").size());
}

TEST_F(Cli, ValidationFailuresNameTheField) {
  auto r = run("--set profiles.0.switching_freq=200000 synth -o bad");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("switching_freq"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir() / "bad"));
  r = run("--set train.bogus=1 synth -o bad");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("train.bogus"), std::string::npos);
  EXPECT_EQ(run("--set fleet.devices.0.profile=5 fleet --model m --archive a -o bad").code, 3);
}

TEST_F(Cli, ErrorClassesHaveDistinctExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("eval --model missing.afcm --data missing.afcf").code, 4);
  EXPECT_EQ(run("-c missing.json synth -o x").code, 4);
  std::ofstream(dir() / "garbage.afcm") << "not a model";
  std::ofstream(dir() / "garbage.afcf") << "not a dataset";
  EXPECT_EQ(run("eval --model garbage.afcm --data garbage.afcf").code, 5);
}

TEST_F(Cli, EnvironmentSuppliesDefaultConfig) {
  const auto path = (dir() / "small.json").string();
  ::setenv("AFCI_CONFIG", path.c_str(), 1);
  const auto r = run("synth -o env");
  ::unsetenv("AFCI_CONFIG");
  ASSERT_EQ(r.code, 0);
  ASSERT_EQ(small("synth -o explicit").code, 0);
  EXPECT_EQ(slurp(dir() / "env/manifest.json"), slurp(dir() / "explicit/manifest.json"));
}

TEST_F(Cli, TrainThenEvalReproducesFoldMetric) {
  ASSERT_EQ(small("synth -o st").code, 0);
  ASSERT_EQ(small("featurize --suite st -o st.afcf").code, 0);
  const auto before = slurp(dir() / "st.afcf");
  ASSERT_EQ(small("train --data st.afcf -o tr").code, 0);
  EXPECT_EQ(slurp(dir() / "st.afcf"), before);  // inputs untouched
  const auto r = small("eval --model tr/model.afcm --data tr/test.afcf -o tr/eval.json");
  ASSERT_EQ(r.code, 0);
  const auto rep = json::parse(slurp(dir() / "tr/report.json")).at("best_test");
  const auto ev = json::parse(slurp(dir() / "tr/eval.json"));
  for (const char* k : {"accuracy", "f1", "macro_f1", "roc_auc", "pr_auc", "loss"})
    EXPECT_NEAR(ev.at(k).get<double>(), rep.at(k).get<double>(), 1e-9) << k;
  EXPECT_TRUE(fs::exists(dir() / "tr/run_manifest.json"));
}

TEST_F(Cli, ScaleEmitsOneRowPerFraction) {
  ASSERT_EQ(small("synth -o sc").code, 0);
  ASSERT_EQ(small("featurize --suite sc -o sc.afcf").code, 0);
  ASSERT_EQ(small("--set 'scale.fractions=[0.05,0.1,0.2,0.4,0.8,1.0]' scale --data sc.afcf -o scale").code, 0);
  std::istringstream csv(slurp(dir() / "scale/scale.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "n,loss");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 6);
  const auto fit = json::parse(slurp(dir() / "scale/scaling_fit.json"));
  EXPECT_TRUE(fit.contains("alpha"));
}

TEST_F(Cli, DetectOnNormalTraceReportsZeroAlarms) {
  ASSERT_EQ(small("synth -o sd").code, 0);
  auto m = afci::nn::make_model(afci::nn::ArchSpec::ld_spec(), 1);
  for (auto& w : m.params.get("head.weight").values) w = 0;
  m.params.get("head.bias").values = {5, -5};
  afci::write_file(dir() / "quiet.afcm", afci::nn::encode_model(m));
  const auto r = small("detect --model quiet.afcm --trace sd/traces/p_startup_0_r0.afci --manifest sd/manifest.json");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "0 alarms\n");
}

}  // namespace
