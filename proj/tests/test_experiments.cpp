#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "qe/experiments.hpp"

using namespace qe;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("qe_exp_" + name + "_" + std::to_string(std::random_device{}()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json config(const std::string& exp, json params, const fs::path& out, const std::string& format = "csv") {
  return {{"experiment", exp}, {"parameters", std::move(params)}, {"output", out.string()}, {"format", format}};
}

void expect_config_error(const json& c, const std::string& needle) {
  try {
    make_plan(c);
    FAIL() << "accepted: " << c.dump();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, RejectsBadInput) {
  const fs::path out = "unused";
  expect_config_error(config("variance-sweep", {{"N", {64}}, {"alpha", 0.9}}, out), "alpha");
  expect_config_error(config("variance-sweep", {{"N", {64}}, {"alpha", 0.4}}, out), "beta_tilde");
  expect_config_error(config("egorov", {{"N", {64}}, {"bogus", 1}}, out), "unknown parameter 'bogus'");
  expect_config_error(config("nope", json::object(), out), "unknown experiment");
  expect_config_error(config("mixing", {{"delta", 0.5}}, out), "seed");
  expect_config_error(config("mixing", {{"delta", 0.7}, {"seed", 1}}, out), "delta");
  expect_config_error(config("egorov", {{"N", {2}}}, out), "below");
  expect_config_error(config("egorov", {{"N", {65}}, {"matrix", {{2, 1}, {1, 1}}}}, out), "odd");
  EXPECT_NO_THROW(make_plan(config("egorov", {{"N", {65}}}, out)));
  expect_config_error(config("egorov", {{"N", {64}}, {"symbol", "cos:k1=40,k2=0"}}, out), "2K < N");
  expect_config_error(config("egorov", {{"N", "64"}}, out), "'N'");
  expect_config_error(config("mass-dist", {{"N", {64}}, {"r", 0.01}}, out), "2/N");
  expect_config_error(config("cover-sweep", {{"seed", 1}, {"r", {0.6}}}, out), "r");
  expect_config_error(config("calculus-defects", {{"N", {8}}, {"symbol_a", "cos:k1=3,k2=0"}}, out), "K_a + K_b");
  expect_config_error({{"experiment", "egorov"}, {"parameters", {{"N", {64}}}}}, "output");
  json extra = config("egorov", {{"N", {64}}}, out);
  extra["colour"] = "red";
  expect_config_error(extra, "colour");
  expect_config_error(config("egorov", {{"N", {64}}}, out, "xml"), "format");
}

TEST(Config, OverridesAndPlan) {
  Overrides ov;
  ov.seed = 42;
  ov.out = "elsewhere";
  const auto plan = make_plan(config("cover-sweep", {{"space", "flat-torus"}, {"r", {0.3, 0.2}}}, "x"), ov);
  EXPECT_EQ(plan.config["parameters"]["seed"], 42);
  EXPECT_EQ(plan.output, fs::path("elsewhere"));
  ASSERT_EQ(plan.points.size(), 2u);
  EXPECT_EQ(plan.points[0].label, "r0.3");
  EXPECT_FALSE(fs::exists("elsewhere"));
}

TEST(Run, EgorovExactForLinearMap) {
  const auto out = scratch("egorov");
  const auto res = run_plan(make_plan(config("egorov", {{"N", {256}}, {"epsilon", 0.0}, {"t_max", 8}}, out)));
  ASSERT_EQ(res.exit_code, 0);
  EXPECT_LE(res.outcomes[0].summary["max_defect"].get<double>(), 1e-10);
  // (1,0) A^t has sup norm 1, 2, 7, 26, 97, 362: t = 5 aliases at N = 256
  EXPECT_EQ(res.outcomes[0].summary["t_reached"], 4);
  EXPECT_TRUE(res.outcomes[0].summary["alias_limited"].get<bool>());
  const std::string csv = slurp(out / "egorov_N256.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,defect,truncation_residual,bandwidth");
  fs::remove_all(out);
}

TEST(Run, ManifestHashesMatchFiles) {
  const auto out = scratch("manifest");
  const auto res = run_plan(make_plan(config("calculus-defects", {{"N", {16, 32, 64}}}, out, "json")));
  ASSERT_EQ(res.exit_code, 0);
  const json m = json::parse(slurp(res.manifest));
  EXPECT_EQ(m["experiment"], "calculus-defects");
  EXPECT_EQ(m["exit_status"], 0);
  EXPECT_FALSE(m["version"].get<std::string>().empty());
  ASSERT_EQ(m["files"].size(), 4u);
  for (const auto& f : m["files"]) {
    const auto p = out / f["path"].get<std::string>();
    EXPECT_EQ(f["sha256"], sha256_file(p));
    EXPECT_EQ(f["bytes"].get<std::uintmax_t>(), fs::file_size(p));
  }
  const json data = json::parse(slurp(out / "calculus_N32.json"));
  EXPECT_EQ(data["columns"][2], "adjoint");
  EXPECT_EQ(data["N"], 32);
  // exact for single modes: adjoint and product commute with quantization
  EXPECT_LE(data["rows"][0][2].get<double>(), 1e-12);
  for (const auto& e : fs::directory_iterator(out)) EXPECT_NE(e.path().extension(), ".tmp");
  fs::remove_all(out);
}

TEST(Sha256, KnownVector) {
  const auto p = fs::temp_directory_path() / "qe_sha_abc.txt";
  { std::ofstream(p) << "abc"; }
  EXPECT_EQ(sha256_file(p), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove(p);
}

TEST(Run, DeterministicAcrossRunsAndWorkers) {
  auto run = [](int workers) {
    const auto out = scratch("det" + std::to_string(workers));
    auto c = config("cover-sweep", {{"space", "flat-torus"}, {"seed", 5}, {"r", {0.3, 0.2, 0.15}}, {"samples", 200}}, out);
    c["parameters"]["workers"] = workers;
    const auto res = run_plan(make_plan(c));
    EXPECT_EQ(res.exit_code, 0);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(out))
      if (e.path().filename() != "manifest.json") files[e.path().filename().string()] = slurp(e.path());
    fs::remove_all(out);
    return files;
  };
  const auto a = run(1), b = run(1), c = run(3);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.at("summary.csv").substr(0, 17), "r,N,c1_hat,c2_hat");
}

TEST(Run, PartialFailureYieldsExitTwo) {
  const auto out = scratch("partial");
  auto plan = make_plan(config("trace-check", {{"N", {8, 16}}, {"symbols", 3}}, out));
  plan.points.insert(plan.points.begin() + 1,
                     SweepPoint{"broken", [](ArtifactWriter&) -> json { fail(Errc::convergence_failure, "boom"); }});
  const auto res = run_plan(plan);
  EXPECT_EQ(res.exit_code, 2);
  const json m = json::parse(slurp(res.manifest));
  EXPECT_EQ(m["points"][0]["status"], "ok");
  EXPECT_EQ(m["points"][1]["status"], "failed");
  EXPECT_NE(m["points"][1]["error"].get<std::string>().find("boom"), std::string::npos);
  EXPECT_EQ(m["points"][2]["status"], "ok");
  EXPECT_TRUE(fs::exists(out / "trace_N8.csv"));
  EXPECT_TRUE(fs::exists(out / "trace_N16.csv"));
  EXPECT_LE(m["summary"]["max_defect"].get<double>(), 1e-12);
  fs::remove_all(out);
}

TEST(Run, VarianceSweepSummary) {
  const auto out = scratch("variance");
  const auto res = run_plan(make_plan(config("variance-sweep", {{"N", {32, 64, 128}}, {"alpha", 0.3}}, out)));
  ASSERT_EQ(res.exit_code, 0);
  EXPECT_TRUE(res.summary["v2_strictly_decreasing"].get<bool>());
  const std::string csv = slurp(out / "summary.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "N,delta,v1,v2,v2_log_n,density_gamma");
  fs::remove_all(out);
}

#ifdef QE_CLI_PATH
namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(QE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path write_config(const json& c, const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << c.dump(2);
  return p;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto out = scratch("cli");
  const auto good = write_config(config("trace-check", {{"N", {8}}, {"symbols", 2}}, "ignored"), "qe_cli_good.json");
  const auto bad = write_config(config("variance-sweep", {{"N", {64}}, {"alpha", 0.9}}, out), "qe_cli_bad.json");
  EXPECT_EQ(cli("validate " + good.string()), 0);
  EXPECT_FALSE(fs::exists("ignored"));
  EXPECT_EQ(cli("validate " + bad.string()), 1);
  EXPECT_EQ(cli("run " + bad.string()), 1);
  EXPECT_EQ(cli("run " + good.string() + " --out " + out.string() + " --seed 3"), 0);
  const json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["config"]["parameters"]["seed"], 3);
  EXPECT_EQ(m["config"]["output"], out.string());
  EXPECT_EQ(cli("run /nonexistent.json"), 1);
  EXPECT_EQ(cli(""), 1);
  fs::remove_all(out);
  fs::remove(good);
  fs::remove(bad);
}
#endif

#ifdef QE_CONFIG_DIR
TEST(Config, SampleConfigsValidate) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(QE_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(make_plan(load_config(e.path().string()))) << e.path();
    ++n;
  }
  EXPECT_GE(n, 8);
}
#endif
