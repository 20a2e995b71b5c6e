#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dail/config.hpp"

using namespace dail;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(DAIL_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  Result r;
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dail_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    tiny_config_ = (dir_ / "tiny.json").string();
    std::ofstream(tiny_config_) << R"({"data": {"num_instructions": 3}, "train": {"feature": 8, "hidden": 8, "batch": 8,
      "epochs": 2, "eval_episodes": 6}, "analysis": {"n_episodes": 6, "n_states": 10}})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::string tiny_config_;
};

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(c.train.lr, 3e-4);
  EXPECT_EQ(c.train.batch, 64u);
  EXPECT_EQ(c.train.lambda, 0.2);
  EXPECT_EQ(c.train.alpha, 2.0);
  EXPECT_EQ(c.sweep.counts.size(), 10u);
  EXPECT_EQ(c.sweep.seeds.size(), 3u);
}

TEST(Config, PartialOverridesAndRejections) {
  const auto c = run_config_from_json(Json::parse(R"({"train": {"lambda": 0.5}, "data": {"n_traj": 64}})"));
  EXPECT_EQ(c.train.lambda, 0.5);
  EXPECT_EQ(c.train.alpha, 2.0);
  EXPECT_EQ(c.data.n_traj, 64u);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"trian": {}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"lamda": 1}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"batch": "64"}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"gamma": 2}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"data": {"success_ratio": -1}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"sweep": {"algorithms": ["sac"]}})")), SchemaError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"env": {"max_step": 0}})")), std::exception);
}

TEST(Config, SeedOverride) {
  RunConfig c;
  ::setenv("DAIL_SEED", "17", 1);
  apply_seed_override(c);
  EXPECT_EQ(c.train.seed, 17u);
  ::setenv("DAIL_SEED", "x1", 1);
  EXPECT_THROW(apply_seed_override(c), SchemaError);
  ::unsetenv("DAIL_SEED");
}

TEST(Config, AgentSaveLoadRoundTrip) {
  Hyperparams h;
  h.feature = 8;
  h.hidden = 8;
  TrainedAgent a(h, 324, 3, 9);
  a.gradient_steps = 12;
  for (auto& prm : a.online.parameters()) prm.values[0] += 0.25;
  const fs::path dir = fs::temp_directory_path() / "dail_agent_rt";
  save_agent(a, dir);
  const TrainedAgent b = load_agent(dir);
  EXPECT_EQ(b.gradient_steps, 12);
  EXPECT_EQ(b.mapping_seed, 9u);
  EXPECT_EQ(b.num_instructions, 3);
  for (std::size_t k = 0; k < a.online.parameters().size(); ++k) {
    EXPECT_EQ(b.online.parameters()[k].values, a.online.parameters()[k].values);
    EXPECT_EQ(b.target.parameters()[k].values, a.target.parameters()[k].values);
  }
  fs::remove_all(dir);
}

TEST_F(Cli, GenDataSizingAndIdempotence) {
  const auto r = run("gen-data --num-instructions 16 --n-traj 1024 --success-ratio 0.5 --seed 1 --out " + p("d.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("successes=512"), std::string::npos);
  EXPECT_EQ(line_count(p("d.jsonl")), 1025u);
  ASSERT_EQ(run("gen-data --num-instructions 16 --n-traj 1024 --success-ratio 0.5 --seed 1 --out " + p("e.jsonl")).code, 0);
  EXPECT_EQ(slurp(p("d.jsonl")), slurp(p("e.jsonl")));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("gen-data --n-traj 4").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen-data --success-ratio 3 --out " + p("x.jsonl")).code, 2);
  EXPECT_EQ(run("train --data " + p("x.jsonl")).code, 2);
  EXPECT_EQ(run("analyze --mode bogus").code, 2);
  EXPECT_EQ(run("analyze --mode disambiguation").code, 2);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run("train --data " + p("missing.jsonl") + " --out " + p("run")).code, 1);
  EXPECT_EQ(run("eval --run " + p("nowhere")).code, 1);
  EXPECT_EQ(run("analyze --run " + p("nowhere") + " --mode embeddings").code, 1);
  std::ofstream(p("bad.json")) << R"({"train": {"lambda": -1}})";
  EXPECT_EQ(run("gen-data --config " + p("bad.json") + " --out " + p("x.jsonl")).code, 1);
  std::ofstream(p("unknown.json")) << R"({"what": 1})";
  EXPECT_EQ(run("gen-data --config " + p("unknown.json") + " --out " + p("x.jsonl")).code, 1);
  ::setenv("DAIL_SEED", "-4", 1);
  EXPECT_EQ(run("gen-data --n-traj 4 --out " + p("x.jsonl")).code, 1);
  ::unsetenv("DAIL_SEED");
}

TEST_F(Cli, EnvConfigOverride) {
  std::ofstream(p("env.json")) << to_json(default_env_config()).dump();
  ASSERT_EQ(run("gen-data --env-config " + p("env.json") + " --n-traj 8 --out " + p("a.jsonl")).code, 0);
  ASSERT_EQ(run("gen-data --n-traj 8 --out " + p("b.jsonl")).code, 0);
  EXPECT_EQ(slurp(p("a.jsonl")), slurp(p("b.jsonl")));
  std::ofstream(p("bad_env.json")) << R"({"width": 2})";
  EXPECT_EQ(run("gen-data --env-config " + p("bad_env.json") + " --n-traj 8 --out " + p("c.jsonl")).code, 1);
}

TEST_F(Cli, TrainEvalAnalyzeFlow) {
  ASSERT_EQ(run("gen-data --config " + tiny_config_ + " --n-traj 24 --seed 2 --out " + p("d.jsonl")).code, 0);
  const auto tr = run("train --config " + tiny_config_ + " --data " + p("d.jsonl") + " --out " + p("run"));
  ASSERT_EQ(tr.code, 0);
  for (const char* f : {"checkpoint.bin", "target.bin", "agent.json", "config.json", "metrics.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  EXPECT_EQ(line_count(dir_ / "run" / "metrics.csv"), 3u);
  const auto snapshot = load_run_config(p("run/config.json"));
  EXPECT_EQ(snapshot.data.n_traj, 24u);
  EXPECT_TRUE(snapshot.train.distributional);

  const auto ev = run("eval --run " + p("run") + " --episodes 9");
  ASSERT_EQ(ev.code, 0);
  EXPECT_NE(ev.out.find("episodes=9"), std::string::npos);
  EXPECT_EQ(run("eval --run " + p("run") + " --episodes 9").out, ev.out);

  const auto an = run("analyze --run " + p("run") + " --n-states 5 --trials 20");
  ASSERT_EQ(an.code, 0);
  EXPECT_NE(an.out.find("silhouette="), std::string::npos);
  EXPECT_NE(an.out.find("w1_detect_rate="), std::string::npos);
  const auto disamb = slurp(dir_ / "run" / "disambiguation.csv");
  EXPECT_NE(disamb.find("mean_verdict"), std::string::npos);
  EXPECT_EQ(line_count(dir_ / "run" / "disambiguation.csv"), 2u + 9u);
  EXPECT_EQ(line_count(dir_ / "run" / "embeddings.csv"), 4u);

  const auto abl = run("train --config " + tiny_config_ + " --data " + p("d.jsonl") + " --out " + p("base") +
                       " --ablate-distributional --ablate-alignment --epochs 1");
  ASSERT_EQ(abl.code, 0);
  const auto base = load_run_config(p("base/config.json"));
  EXPECT_FALSE(base.train.distributional);
  EXPECT_FALSE(base.train.alignment);
  EXPECT_EQ(base.train.epochs, 1u);

  ::setenv("DAIL_SEED", "5", 1);
  ASSERT_EQ(run("train --config " + tiny_config_ + " --data " + p("d.jsonl") + " --out " + p("seeded") + " --epochs 1").code, 0);
  ::unsetenv("DAIL_SEED");
  EXPECT_EQ(load_run_config(p("seeded/config.json")).train.seed, 5u);
}

TEST_F(Cli, TrainRejectsInstructionMismatch) {
  ASSERT_EQ(run("gen-data --num-instructions 5 --n-traj 10 --out " + p("d.jsonl")).code, 0);
  EXPECT_EQ(run("train --config " + tiny_config_ + " --data " + p("d.jsonl") + " --out " + p("run")).code, 1);
  EXPECT_FALSE(fs::exists(dir_ / "run" / "checkpoint.bin"));
}

TEST_F(Cli, SilhouetteOnSingleInstructionRunFails) {
  ASSERT_EQ(run("gen-data --num-instructions 1 --n-traj 8 --out " + p("d.jsonl")).code, 0);
  std::ofstream(p("one.json")) << R"({"data": {"num_instructions": 1}, "train": {"feature": 8, "hidden": 8,
    "epochs": 1, "eval_episodes": 2}})";
  ASSERT_EQ(run("train --config " + p("one.json") + " --data " + p("d.jsonl") + " --out " + p("run")).code, 0);
  EXPECT_EQ(run("analyze --run " + p("run") + " --mode silhouette").code, 1);
}

TEST_F(Cli, McTheoremMode) {
  const auto r = run("analyze --mode mc-theorem --n 100 --trials 500");
  ASSERT_EQ(r.code, 0);
  AnalysisThresholds th;
  th.delta = th.d = 1.0;
  const auto want = mc_theorem_check(discrete_sampler({-1.0, 1.0}, {0.5, 0.5}), discrete_sampler({0.0}, {1.0}), 100,
                                     500, th, 0);
  EXPECT_NE(r.out.find("w1_detect_rate=" + format_real(want.w1_detect_rate) + " "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("mean_detect_rate=" + format_real(want.mean_detect_rate) + " "), std::string::npos) << r.out;
}

TEST_F(Cli, SweepResumeAndPlot) {
  const std::string base = "sweep --config " + tiny_config_ + " --grad-steps 2 --jobs 2 --seeds 0 --out " + p("sw");
  const auto r = run(base + " --counts 1,2");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(line_count(dir_ / "sw" / "sweep.csv"), 5u);
  EXPECT_TRUE(fs::exists(dir_ / "sw" / "plot.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "sw" / "config.json"));
  const std::string first = slurp(dir_ / "sw" / "sweep.csv");

  const auto again = run(base + " --counts 1,2,4 --resume");
  ASSERT_EQ(again.code, 0);
  const std::string second = slurp(dir_ / "sw" / "sweep.csv");
  EXPECT_EQ(line_count(dir_ / "sw" / "sweep.csv"), 7u);
  EXPECT_EQ(second.substr(0, first.size()), first);

  ASSERT_EQ(run("plot --sweep " + p("sw/sweep.csv") + " --out " + p("again.svg")).code, 0);
  EXPECT_EQ(slurp(dir_ / "again.svg"), slurp(dir_ / "sw" / "plot.svg"));
  EXPECT_EQ(run("sweep --counts 0 --out " + p("bad")).code, 1);
}
