#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "support.hpp"

using namespace pathfollow;
namespace pt = pathfollow::testing;
namespace fs = std::filesystem;

namespace {

int lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

/// Relative path -> contents for every file below `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = pt::slurp(e.path().string());
  return out;
}

}  // namespace

TEST(Cli, UsageErrors) {
  pt::TempDir dir("cli");
  pt::CommandResult r = pt::run_cli(dir, "");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(lines(r.err), 1);

  r = pt::run_cli(dir, "train-nn --data missing.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(lines(r.err), 1);

  r = pt::run_cli(dir, "--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"collect-expert", "train-nn", "fit-pid", "rank", "benchmark", "micro-sim", "teleop"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, RuntimeErrorsAreOneLine) {
  pt::TempDir dir("cli");
  pt::CommandResult r = pt::run_cli(dir, "rank --policies mpc,warp --n 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: invalid-argument: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("warp"), std::string::npos);
  EXPECT_EQ(lines(r.err), 1);
  EXPECT_FALSE(fs::exists(dir.path() / "out"));

  r = pt::run_cli(dir, "rank --policies mpc,mpc --n 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("duplicate label"), std::string::npos);

  std::ofstream(dir / "bad.csv") << "t,e1\n";
  r = pt::run_cli(dir, "fit-pid --data bad.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: parse: ", 0), 0u) << r.err;
  EXPECT_EQ(lines(r.err), 1);

  r = pt::run_cli(dir, "benchmark --paths 1,x");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--paths"), std::string::npos);
}

TEST(Cli, MicroSim) {
  pt::TempDir dir("cli");
  pt::CommandResult r = pt::run_cli(dir, "micro-sim --e -1.5 --phi 0.5236");
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["settled"].get<bool>());
  EXPECT_GT(j["settling_time"].get<double>(), 0.0);
  EXPECT_LT(j["settling_time"].get<double>(), 30.0);
  EXPECT_GT(j["steps"].get<int>(), 0);

  r = pt::run_cli(dir, "micro-sim --policy zero --e 2 --phi 0 --log --out logs");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["settling_time"].is_null());
  EXPECT_EQ(lines(pt::slurp(dir / "logs/micro_sim.csv")), 301);
}

TEST(Cli, RankDeterministicAcrossWorkers) {
  pt::TempDir dir("cli");
  ASSERT_EQ(pt::run_cli(dir, "--out a rank --policies mpc,idle=zero --n 8").code, 0);
  ASSERT_EQ(pt::run_cli(dir, "--out b --workers 3 rank --policies mpc,idle=zero --n 8").code, 0);
  ASSERT_EQ(pt::run_cli(dir, "--out c --seed 1 rank --policies mpc,idle=zero --n 8").code, 0);
  const auto a = snapshot(dir.path() / "a"), b = snapshot(dir.path() / "b"), c = snapshot(dir.path() / "c");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.at("rank.json"), c.at("rank.json"));
  const nlohmann::json j = nlohmann::json::parse(a.at("rank.json"));
  EXPECT_EQ(j["policies"][1]["name"], "idle");
  EXPECT_EQ(j["provenance"]["tool_version"], std::string(kToolVersion));
  EXPECT_NE(a.at("rank.txt").find("idle"), std::string::npos);
}

TEST(Cli, BenchmarkOutputsAndDeterminism) {
  pt::TempDir dir("cli");
  const pt::CommandResult r = pt::run_cli(dir, "--out a benchmark --policies mpc,p2=mpc --paths 1 --repeats 2");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(pt::run_cli(dir, "--out b --workers 4 benchmark --policies mpc,p2=mpc --paths 1 --repeats 2").code, 0);
  const auto a = snapshot(dir.path() / "a");
  EXPECT_EQ(a, snapshot(dir.path() / "b"));
  // 3 summaries + (csv + svg) per run.
  EXPECT_EQ(a.size(), 3u + 2 * 4);
  EXPECT_EQ(lines(a.at("benchmark.csv")), 3);
  EXPECT_TRUE(a.count("runs/mpc_path1_reconstruction_run0.csv"));
  EXPECT_TRUE(a.count("svg/p2_path1_reconstruction_run1.svg"));
  EXPECT_NE(r.out.find("reconstruction"), std::string::npos);
}

TEST(Cli, FailedRunLeavesNoPartialOutput) {
  pt::TempDir dir("cli");
  fs::create_directories(dir.path() / "out");
  std::ofstream(dir / "out/svg") << "in the way";
  const pt::CommandResult r = pt::run_cli(dir, "benchmark --policies mpc --paths 1 --repeats 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: io: ", 0), 0u) << r.err;
  EXPECT_EQ(lines(r.err), 1);
  const auto left = snapshot(dir.path() / "out");
  ASSERT_EQ(left.size(), 1u);
  EXPECT_EQ(left.at("svg"), "in the way");
  EXPECT_FALSE(fs::exists(dir.path() / "out/runs"));
}

TEST(Cli, ConfigFile) {
  pt::TempDir dir("cli");
  std::ofstream(dir / "vehicle.json") << R"({"wheelbase": 0.45})";
  std::ofstream(dir / "wb.json") << R"({"vehicle_params": "vehicle.json", "seed": 4, "out": "from_config"})";
  ASSERT_EQ(pt::run_cli(dir, "--config wb.json rank --policies mpc,zero --n 2").code, 0);
  const nlohmann::json j = nlohmann::json::parse(pt::slurp(dir / "from_config/rank.json"));
  EXPECT_EQ(j["seed"], 4);
  EXPECT_EQ(j["provenance"]["config_hash"], config_hash(load_workbench_config(dir / "wb.json")));
  EXPECT_NE(j["provenance"]["config_hash"], config_hash(WorkbenchConfig{}));

  // Command-line flags override the file.
  ASSERT_EQ(pt::run_cli(dir, "--config wb.json --seed 5 --out cli rank --policies mpc,zero --n 2").code, 0);
  EXPECT_EQ(nlohmann::json::parse(pt::slurp(dir / "cli/rank.json"))["seed"], 5);

  std::ofstream(dir / "typo.json") << R"({"seeed": 4})";
  const pt::CommandResult r = pt::run_cli(dir, "--config typo.json rank --n 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("seeed"), std::string::npos);
}

TEST(Cli, ExpertToPoliciesPipeline) {
  pt::TempDir dir("cli");
  pt::CommandResult r = pt::run_cli(dir, "--out data collect-expert --duration 10");
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset d = load_dataset(dir / "data/expert.csv");
  EXPECT_EQ(d.size(), 700u);

  r = pt::run_cli(dir, "--out pid fit-pid --data data/expert.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const PidGains g = pid_gains_from_json(read_json_file(dir / "pid/pid_gains.json"));
  EXPECT_TRUE(g.K.allFinite());

  r = pt::run_cli(dir, "--out nn train-nn --data data/expert.csv --epochs 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json rep = nlohmann::json::parse(pt::slurp(dir / "nn/train_report.json"));
  EXPECT_EQ(rep["epochs"], 3);
  EXPECT_EQ(rep["samples"], 700);
  load_model(dir / "nn/model.json");

  r = pt::run_cli(dir, "rank --policies mpc,nn:nn/model.json,pid:pid/pid_gains.json --n 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json rank = nlohmann::json::parse(pt::slurp(dir / "out/rank.json"));
  ASSERT_EQ(rank["policies"].size(), 3u);
  EXPECT_EQ(rank["provenance"]["policies"][1]["kind"], "nn");
  EXPECT_EQ(rank["provenance"]["policies"][1]["file_hash"].get<std::string>().size(), 16u);
}
