#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mie/sim.hpp"
#include "mie_lab/cli.hpp"

namespace mie::lab {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mie_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const std::string& name, const nlohmann::json& j) {
    const auto path = (dir_ / name).string();
    std::ofstream(path) << j.dump(2);
    return path;
  }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream b;
    b << in.rdbuf();
    return b.str();
  }

  nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read(p)); }

  static nlohmann::json toy(std::uint64_t horizon = 30) {
    return {{"scenario", {{"kind", "toy_coadapt"}, {"alpha_h", 0.2}, {"alpha_m", 0.3}, {"x0", 0.9}, {"y0", 0.1}}},
            {"run", {{"seed", 42}, {"horizon", horizon}, {"snapshot_cadence", 1}}},
            {"tolerances", {{"neural", 1e-6}, {"cognitive", 1e-6}, {"policy", 1e-6}, {"brgap", 1e-6}, {"window", 3}}}};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, SimulateTwiceByteIdentical) {
  const auto cfg = write_config("toy.json", toy());
  const auto a = (dir_ / "a").string(), b = (dir_ / "b").string();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", a, "--quiet"}), kOk) << err_.str();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", b, "--quiet"}), kOk);
  for (const char* f : {"log.jsonl", "series.csv", "summary.json", "drift.csv"})
    EXPECT_EQ(read(fs::path(a) / f), read(fs::path(b) / f)) << f;
  EXPECT_TRUE(fs::exists(fs::path(a) / "run_meta.json"));
}

TEST_F(Cli, MissingKindNamesKey) {
  auto j = toy();
  j["scenario"].erase("kind");
  EXPECT_EQ(run({"simulate", "--config", write_config("bad.json", j), "--out", (dir_ / "o").string()}), kConfigError);
  EXPECT_NE(err_.str().find("scenario.kind"), std::string::npos);
}

TEST_F(Cli, MalformedJsonReportsLine) {
  const auto path = (dir_ / "bad.json").string();
  std::ofstream(path) << "{\n  \"scenario\": {\"kind\": \"toy_coadapt\"},\n  \"run\": {horizon: 3}\n}\n";
  EXPECT_EQ(run({"simulate", "--config", path}), kConfigError);
  EXPECT_NE(err_.str().find("line 3"), std::string::npos) << err_.str();
}

TEST_F(Cli, ToySeriesFollowsClosedForm) {
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", write_config("toy.json", toy()), "--out", out, "--quiet"}), kOk);
  std::ifstream in(fs::path(out) / "series.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 12), "t,x,y,U,d,r_");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<double> v;
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
    const double d = 0.8 * std::pow(0.3, v[0]);
    EXPECT_NEAR(v[4], d, 1e-15);
    EXPECT_NEAR(v[3], 1 - d * d, 1e-15);
    ++rows;
  }
  EXPECT_EQ(rows, 30);
}

TEST_F(Cli, AnalyzeToy) {
  const auto cfg = write_config("toy.json", toy());
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"analyze", "--config", cfg, "--out", out}), kOk) << err_.str();
  const auto eq = read_json(fs::path(out) / "equilibrium.json");
  EXPECT_TRUE(eq["conditions"]["cognitive_consistency"].get<bool>());
  EXPECT_TRUE(eq["conditions"]["behavioral_best_response"].get<bool>());
  const auto st = read_json(fs::path(out) / "stability.json");
  EXPECT_EQ(st["classification"], "neutral");
  std::vector<double> mods;
  for (const auto& e : st["eigenvalues"]) mods.push_back(e["abs"].get<double>());
  std::sort(mods.begin(), mods.end());
  EXPECT_NEAR(mods[0], 0.3, 1e-8);
  EXPECT_NEAR(mods[1], 1.0, 1e-8);
  EXPECT_EQ(eq["config_hash"], st["config_hash"]);
}

TEST_F(Cli, AnalyzePrisonersDilemma) {
  nlohmann::json j{{"scenario", {{"kind", "matrix_game"}, {"game", "prisoners_dilemma"}, {"agents", {{{"beta", 10.0}}, {{"beta", 10.0}}}}}},
                   {"run", {{"seed", 3}, {"horizon", 3000}, {"snapshot_cadence", 100}}}};
  const auto cfg = write_config("pd.json", j);
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"analyze", "--config", cfg, "--out", out, "--quiet"}), kOk) << err_.str();
  const auto eq = read_json(fs::path(out) / "equilibrium.json");
  for (const auto& g : eq["brgap"]) EXPECT_LT(g.get<double>(), 1e-3);
}

TEST_F(Cli, AnalyzeRefusesMismatch) {
  const auto cfg = write_config("toy.json", toy());
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", out, "--quiet"}), kOk);
  EXPECT_EQ(run({"analyze", "--config", cfg, "--seed", "7", "--out", out}), kDataError);
  auto other = toy(31);
  EXPECT_EQ(run({"analyze", "--config", write_config("other.json", other), "--out", out}), kDataError);
}

TEST_F(Cli, TruncatedLogNamesTick) {
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", write_config("toy.json", toy()), "--out", out, "--quiet"}), kOk);
  const auto text = read(fs::path(out) / "log.jsonl");
  const auto cut = (dir_ / "cut.jsonl").string();
  std::ofstream(cut) << text.substr(0, text.size() / 2);
  EXPECT_EQ(run({"analyze", "--log", cut, "--out", out}), kDataError);
  EXPECT_NE(err_.str().find("tick"), std::string::npos) << err_.str();
}

TEST_F(Cli, ReplayOkAndTampered) {
  const auto out = (dir_ / "o").string();
  nlohmann::json j{{"scenario", {{"kind", "matrix_game"}, {"game", "matching_pennies"}}},
                   {"run", {{"seed", 9}, {"horizon", 200}}}};
  ASSERT_EQ(run({"simulate", "--config", write_config("mp.json", j), "--out", out, "--quiet"}), kOk);
  EXPECT_EQ(run({"replay", "--out", out}), kOk);
  auto log = load_log_file((fs::path(out) / "log.jsonl").string());
  log.ticks[50].actions[0] ^= 1u;
  const auto bad = (dir_ / "bad.jsonl").string();
  std::ofstream(bad) << serialize_log(log);
  EXPECT_EQ(run({"replay", "--log", bad}), kDataError);
  EXPECT_NE(out_.str().find("tick 50"), std::string::npos) << out_.str();
}

nlohmann::json toy_sweep(std::size_t n) {
  nlohmann::json j{{"scenario", {{"kind", "toy_coadapt"}}},
                   {"run", {{"seed", 1}, {"horizon", 300}, {"snapshot_cadence", 300}}},
                   {"sweep",
                    {{"axes",
                      {{{"key", "alpha_h"}, {"lo", 0.05}, {"hi", 1.0}, {"count", n}},
                       {{"key", "alpha_m"}, {"lo", 0.05}, {"hi", 1.0}, {"count", n}}}}}}};
  return j;
}

TEST_F(Cli, SweepIndependentOfJobs) {
  const auto cfg = write_config("sweep.json", toy_sweep(12));
  const auto a = (dir_ / "a").string(), b = (dir_ / "b").string();
  ASSERT_EQ(run({"sweep", "--config", cfg, "--out", a, "--jobs", "1", "--quiet"}), kOk) << err_.str();
  ASSERT_EQ(run({"sweep", "--config", cfg, "--out", b, "--jobs", "3", "--quiet"}), kOk);
  EXPECT_EQ(read(fs::path(a) / "sweep.csv"), read(fs::path(b) / "sweep.csv"));
  EXPECT_EQ(read(fs::path(a) / "sweep.json"), read(fs::path(b) / "sweep.json"));
}

TEST_F(Cli, SweepBoundaryMatchesContraction) {
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"sweep", "--config", write_config("s.json", toy_sweep(20)), "--out", out, "--quiet"}), kOk);
  const auto report = read_json(fs::path(out) / "sweep.json");
  const double step = 0.95 / 19.0;
  for (const auto& c : report["cells"]) {
    const double ah = c["coords"][0], am = c["coords"][1];
    const double margin = std::abs(1 - 2 * ah - am) - 1;
    if (std::abs(margin) <= 3 * step) continue;
    EXPECT_EQ(c["label"], margin < 0 ? "converged" : "diverged") << ah << ' ' << am;
  }
}

TEST_F(Cli, SingleCellSweepEqualsSimulateAnalyze) {
  auto base = toy(60);
  base["analysis"] = {{"stability", false}};
  auto sweep = base;
  sweep["sweep"] = {{"axes", {{{"key", "alpha_h"}, {"lo", 0.2}, {"hi", 0.2}, {"count", 1}}}}, {"analyze", true}};
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", write_config("b.json", base), "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"analyze", "--config", write_config("b.json", base), "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"sweep", "--config", write_config("s.json", sweep), "--out", out, "--quiet"}), kOk) << err_.str();
  const auto eq = read_json(fs::path(out) / "equilibrium.json");
  const auto cell = read_json(fs::path(out) / "sweep.json")["cells"][0];
  EXPECT_EQ(cell["analysis"], eq);
  const auto log = load_log_file((fs::path(out) / "log.jsonl").string());
  EXPECT_EQ(cell["final_metric"].get<double>(), std::abs(log.ticks.back().scalars[3]));
}

TEST_F(Cli, SweepHardFailureExitsFive) {
  auto j = toy_sweep(3);
  j["sweep"]["axes"][0]["lo"] = -1.0;
  EXPECT_EQ(run({"sweep", "--config", write_config("s.json", j), "--out", (dir_ / "o").string()}), kSweepError);
}

TEST_F(Cli, SweepUnknownKeyIsConfigError) {
  auto j = toy_sweep(3);
  j["sweep"]["axes"][0]["key"] = "gamma";
  EXPECT_EQ(run({"sweep", "--config", write_config("s.json", j), "--out", (dir_ / "o").string()}), kConfigError);
}

TEST_F(Cli, BmiSweepStableCorner) {
  nlohmann::json j{{"scenario", {{"kind", "bmi_coadapt"}}},
                   {"run", {{"seed", 1}, {"horizon", 600}, {"snapshot_cadence", 600}}},
                   {"sweep",
                    {{"axes",
                      {{{"key", "alpha_h"}, {"lo", 0.2}, {"hi", 0.8}, {"count", 2}},
                       {{"key", "alpha_m"}, {"lo", 0.01}, {"hi", 5.0}, {"count", 2}}}}}}};
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"sweep", "--config", write_config("s.json", j), "--out", out, "--quiet"}), kOk) << err_.str();
  const auto report = read_json(fs::path(out) / "sweep.json");
  bool corner = false, diverged = false;
  for (const auto& c : report["cells"]) {
    if (c["coords"][1].get<double>() == 0.01 && c["label"] == "converged") corner = true;
    if (c["label"] == "diverged") diverged = true;
  }
  EXPECT_TRUE(corner);
  EXPECT_TRUE(diverged);
}

TEST_F(Cli, BasinSweep) {
  nlohmann::json j{{"scenario", {{"kind", "toy_coadapt"}}},
                   {"sweep",
                    {{"kind", "basin"},
                     {"axes",
                      {{{"key", "belief[0][0]"}, {"lo", 0.0}, {"hi", 1.0}, {"count", 3}},
                       {{"key", "belief[1][0]"}, {"lo", 0.0}, {"hi", 1.0}, {"count", 3}}}}}}};
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"sweep", "--config", write_config("s.json", j), "--out", out, "--quiet"}), kOk) << err_.str();
  EXPECT_EQ(read_json(fs::path(out) / "basin.json")["cells"].size(), 9u);
}

TEST_F(Cli, EstimateWithoutNeuralSeriesWarns) {
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", write_config("toy.json", toy()), "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"estimate", "--out", out}), kOk) << err_.str();
  const auto est = read_json(fs::path(out) / "estimate.json");
  bool cca_warning = false;
  for (const auto& w : est["warnings"]) cca_warning |= w["analysis"] == "cca";
  EXPECT_TRUE(cca_warning);
}

TEST_F(Cli, EstimateRecoversFixedPolicy) {
  nlohmann::json j{{"scenario",
                    {{"kind", "matrix_game"},
                     {"agents", {{{"learner", "fixed"}, {"policy", {0.2, 0.8}}}, {{"learner", "fixed"}, {"policy", {0.6, 0.4}}}}}}},
                   {"run", {{"seed", 4}, {"horizon", 100000}, {"snapshot_cadence", 100000}}}};
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", write_config("f.json", j), "--out", out, "--quiet"}), kOk) << err_.str();
  ASSERT_EQ(run({"estimate", "--out", out, "--quiet"}), kOk) << err_.str();
  const auto est = read_json(fs::path(out) / "estimate.json");
  EXPECT_NEAR(est["empirical_policy"][0]["policy"][0][0].get<double>(), 0.2, 0.01);
  EXPECT_NEAR(est["empirical_policy"][1]["policy"][0][0].get<double>(), 0.6, 0.01);
}

TEST_F(Cli, EstimateDepthOnFictitiousPlay) {
  nlohmann::json j{{"scenario",
                    {{"kind", "matrix_game"},
                     {"agents", {{{"learner", "fictitious_play"}, {"beta", 5.0}}, {{"learner", "fictitious_play"}, {"beta", 5.0}}}}}},
                   {"run", {{"seed", 4}, {"horizon", 2000}, {"snapshot_cadence", 100}}},
                   {"estimate", {{"depths", {0, 1}}, {"holdout", 0.5}}}};
  const auto cfg = write_config("fp.json", j);
  const auto out = (dir_ / "o").string();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", out, "--quiet"}), kOk);
  ASSERT_EQ(run({"estimate", "--config", cfg, "--out", out, "--quiet"}), kOk) << err_.str();
  EXPECT_EQ(read_json(fs::path(out) / "estimate.json")["depth_comparison"]["best_depth"], 1);
}

TEST_F(Cli, JobsValidation) {
  const auto cfg = write_config("s.json", toy_sweep(2));
  EXPECT_EQ(run({"sweep", "--config", cfg, "--jobs", "0", "--out", (dir_ / "o").string()}), kConfigError);
  setenv("MIE_LAB_JOBS", "zero", 1);
  EXPECT_EQ(run({"sweep", "--config", cfg, "--out", (dir_ / "o").string()}), kConfigError);
  setenv("MIE_LAB_JOBS", "2", 1);
  EXPECT_EQ(run({"sweep", "--config", cfg, "--out", (dir_ / "o").string(), "--quiet"}), kOk);
  unsetenv("MIE_LAB_JOBS");
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({"--help"}), kOk);
  EXPECT_EQ(run({"explode"}), kConfigError);
  EXPECT_EQ(run({}), kConfigError);
  EXPECT_EQ(run({"simulate"}), kConfigError);
  EXPECT_EQ(run({"simulate", "--config", (dir_ / "missing.json").string()}), kConfigError);
  EXPECT_EQ(run({"simulate", "--config", (dir_ / "x.toml").string()}), kConfigError);
}

}  // namespace
}  // namespace mie::lab
