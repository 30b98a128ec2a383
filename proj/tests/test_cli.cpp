#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support.hpp"

namespace msff {
namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "msff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small micro-scale training overrides shared by the tests below.
std::vector<std::string> quick(std::vector<std::string> args, int steps = 2) {
  for (const char* s : {"preset=micro", "train.batch_size=2"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  args.push_back("--set");
  args.push_back("train.max_steps=" + std::to_string(steps));
  return args;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("msff_cli");
    const Outcome o = run({"gen-data", "--n", "3", "--seed", "7", "--out",
                           (dir_->path() / "data").string(), "--set", "generator.image_size=80"});
    ASSERT_EQ(o.code, 0) << o.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string data() { return (dir_->path() / "data").string(); }
  static std::filesystem::path at(const std::string& leaf) { return dir_->path() / leaf; }
  static testing::TempDir* dir_;
};
testing::TempDir* CliRun::dir_ = nullptr;

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"eval", "--data", "x"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, GenDataIsByteReproducible) {
  testing::TempDir dir("msff_cli_gen");
  const auto a = (dir / "a").string();
  const auto b = (dir / "b").string();
  ASSERT_EQ(run({"gen-data", "--n", "16", "--seed", "7", "--out", a}).code, 0);
  ASSERT_EQ(run({"gen-data", "--n", "16", "--seed", "7", "--out", b}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "config.json"));
}

TEST(Cli, ValidationErrorsAreOneLineJson) {
  testing::TempDir dir("msff_cli_bad");
  const Outcome o = run({"gen-data", "--n", "0", "--seed", "1", "--out", (dir / "d").string()});
  EXPECT_EQ(o.code, 1);
  ASSERT_FALSE(o.err.empty());
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);
  const auto j = nlohmann::json::parse(o.err);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_TRUE(j.contains("message"));
}

TEST(Cli, UnknownConfigKeyNamesTheField) {
  testing::TempDir dir("msff_cli_cfg");
  const Outcome o = run({"gen-data", "--n", "1", "--seed", "1", "--out", (dir / "d").string(),
                         "--set", "generator.colour=1"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("generator.colour"), std::string::npos) << o.err;
}

TEST_F(CliRun, MissingCheckpointNamesThePath) {
  const auto ckpt = at("missing.ckpt").string();
  const Outcome o = run({"eval", "--data", data(), "--checkpoint", ckpt, "--out",
                         at("e_missing").string()});
  EXPECT_EQ(o.code, 1);
  const auto j = nlohmann::json::parse(o.err);
  EXPECT_NE(j.dump().find(ckpt), std::string::npos) << o.err;
}

TEST_F(CliRun, TrainEvalPredictProduceArtifacts) {
  const std::string manifest_before = slurp(at("data") / "manifest.json");
  const Outcome t = run(quick({"train", "--data", data(), "--out", at("run").string()}));
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"config.json", "log.csv", "model.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(at("run") / f)) << f;
  }
  EXPECT_EQ(slurp(at("data") / "manifest.json"), manifest_before);  // inputs untouched

  const Outcome e = run({"eval", "--data", data(), "--checkpoint",
                         (at("run") / "model.ckpt").string(), "--out", at("ev").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  for (const char* f : {"report.json", "pck.csv", "pck.png", "spread.png", "config.json"}) {
    EXPECT_TRUE(std::filesystem::exists(at("ev") / f)) << f;
  }
  const auto report = nlohmann::json::parse(slurp(at("ev") / "report.json"));
  EXPECT_TRUE(report.contains("pck_curve"));

  const Outcome p = run({"predict", "--image", (at("data") / "images" / "000000.png").string(),
                         "--checkpoint", (at("run") / "model.ckpt").string(), "--out",
                         at("pred").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(std::filesystem::exists(at("pred") / "overlay.png"));
  const auto joints = nlohmann::json::parse(slurp(at("pred") / "joints.json"));
  EXPECT_FALSE(joints.empty());
}

TEST_F(CliRun, ConfigEchoReproducesTheRun) {
  ASSERT_EQ(run(quick({"train", "--data", data(), "--out", at("r1").string()}, 3)).code, 0);
  const Outcome again = run({"train", "--data", data(), "--config",
                             (at("r1") / "config.json").string(), "--out", at("r2").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(at("r1") / "log.csv"), slurp(at("r2") / "log.csv"));
  EXPECT_EQ(slurp(at("r1") / "model.ckpt"), slurp(at("r2") / "model.ckpt"));
}

TEST_F(CliRun, FlagsOverrideTheConfigFile) {
  std::ofstream(at("cfg.json")) << R"({"preset": "micro", "train": {"max_steps": 1, "batch_size": 2}})";
  ASSERT_EQ(run({"train", "--data", data(), "--config", at("cfg.json").string(), "--set",
                 "train.max_steps=2", "--out", at("r3").string()})
                .code,
            0);
  const auto echo = nlohmann::json::parse(slurp(at("r3") / "config.json"));
  EXPECT_EQ(echo["train"]["max_steps"], 2);
  EXPECT_EQ(echo["train"]["batch_size"], 2);
}

TEST_F(CliRun, ResumeContinuesTheStepCount) {
  ASSERT_EQ(run(quick({"train", "--data", data(), "--out", at("a").string()}, 4)).code, 0);
  ASSERT_EQ(run(quick({"train", "--data", data(), "--out", at("b").string()}, 2)).code, 0);
  const Outcome r = run(quick({"train", "--data", data(), "--out", at("c").string(), "--resume",
                               (at("b") / "model.ckpt").string()},
                              4));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(at("a") / "model.ckpt"), slurp(at("c") / "model.ckpt"));
}

TEST(RunConfig, LoadAppliesOverrides) {
  const auto rc = cli::load_run_config({}, {"preset=micro", "model.num_msff=2",
                                            "model.activation=smooth", "train.learning_rate=0.002"});
  EXPECT_EQ(rc.model.crop_size, 64);
  EXPECT_EQ(rc.model.num_msff, 2);
  EXPECT_EQ(rc.model.activation, Activation::Smooth);
  EXPECT_DOUBLE_EQ(rc.train.learning_rate, 0.002);
  EXPECT_EQ(cli::run_config_from_json(cli::to_json(rc)).model, rc.model);
}

}  // namespace
}  // namespace msff
