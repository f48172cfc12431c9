#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>

#include <nlohmann/json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using testsupport::scratch_dir;

namespace {

int run_cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + CLI_PATH + "' " + args + " >> cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.insert(e.path().filename().string());
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  if (listing(a) != listing(b)) return false;
  for (const auto& name : listing(a)) {
    if (slurp(a / name) != slurp(b / name)) return false;
  }
  return true;
}

// Shared small fixture, generated once per test case.
fs::path fixture(const std::string& name) {
  const fs::path dir = scratch_dir(name);
  REQUIRE(run_cli(dir, "synth data --classes 3 --per-class 20 --height 3 --width 3 --depth 8") == 0);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("select enumerates the grid deterministically") {
  const fs::path dir = fixture("cli_select");
  REQUIRE(run_cli(dir, "select -d data --selectors random --budgets 0.1 --out-dir one") == 0);
  CHECK(listing(dir / "one") == std::set<std::string>{"random_rho0.10.json"});
  const std::string first = slurp(dir / "one" / "random_rho0.10.json");
  REQUIRE(run_cli(dir, "select -d data --selectors random --budgets 0.1 --out-dir one") == 0);
  CHECK(slurp(dir / "one" / "random_rho0.10.json") == first);

  const json j = read_json(dir / "one" / "random_rho0.10.json");
  CHECK(j.contains("config_hash"));
  CHECK(j["seed"] == 0);

  REQUIRE(run_cli(dir, "select -d data --selectors random,moderate,dgpruning --budgets 0.05,0.1,0.2,0.3,0.4,0.5") == 0);
  const auto files = listing(dir / "outputs" / "synthetic" / "coresets");
  CHECK(files.size() == 18);
  CHECK(files.count("dgpruning_rho0.05.json") == 1);
  CHECK(files.count("moderate_rho0.50.json") == 1);
}

TEST_CASE("interpret, evaluate, transfer and robustness") {
  const fs::path dir = fixture("cli_flow");
  const std::string common = "-d data -m ice --rank 3";
  REQUIRE(run_cli(dir, "select -d data --selectors moderate --budgets 0.1,0.3") == 0);
  const std::string cs = "outputs/synthetic/coresets/moderate_rho0.30.json";

  REQUIRE(run_cli(dir, "interpret " + common) == 0);
  const fs::path full = dir / "outputs/synthetic/ice/full/1.00";
  const json header = read_json(full / "ice.json");
  CHECK(header["tag"] == "full");
  CHECK(header["rho"] == 1.0);
  CHECK(header.contains("config_hash"));

  REQUIRE(run_cli(dir, "interpret " + common + " --coreset " + cs) == 0);
  const fs::path core = dir / "outputs/synthetic/ice/moderate/0.30";
  CHECK(read_json(core / "ice.json")["tag"] == "moderate");

  SUBCASE("equal configs give equal bytes") {
    REQUIRE(run_cli(dir, "interpret " + common + " --coreset " + cs + " --out-dir again") == 0);
    CHECK(same_tree(core, dir / "again"));
  }
  SUBCASE("self-transfer equals a direct run") {
    REQUIRE(run_cli(dir, "transfer " + common + " --coreset " + cs + " --out-dir transferred") == 0);
    CHECK(same_tree(core, dir / "transferred"));
  }
  SUBCASE("flags override the config file") {
    std::ofstream(dir / "cfg.json") << R"({"interpretation": {"ice": {"rank": 2}}, "seed": 4})";
    REQUIRE(run_cli(dir, "interpret -d data -m ice -c cfg.json --out-dir from_cfg") == 0);
    REQUIRE(run_cli(dir, "interpret -d data -m ice -c cfg.json --rank 3 --out-dir from_flag") == 0);
    const json a = read_json(dir / "from_cfg" / "ice.json");
    const json b = read_json(dir / "from_flag" / "ice.json");
    CHECK(a["classes"]["0"]["r"] == 2);
    CHECK(b["classes"]["0"]["r"] == 3);
    CHECK(a["seed"] == 4);
    CHECK(a["config_hash"] != b["config_hash"]);
  }
  SUBCASE("evaluate and robustness") {
    REQUIRE(run_cli(dir, "evaluate " + common + " --full " + full.string() + " --features " + core.string()) == 0);
    const json sim = read_json(core / "similarity.json");
    CHECK(sim["budget_rho"] == 0.3);
    CHECK(sim["coreset"] == "moderate");
    CHECK(sim["phi_mean"].get<double>() >= 0.0);
    CHECK(sim.contains("config_hash"));
    const json fid = read_json(core / "fidelity.json");
    CHECK(fid["n_evaluated"] == 60);
    CHECK(slurp(core / "fidelity.csv").rfind("rho,method,coreset,accuracy\n0.3000,ice,moderate,", 0) == 0);

    // one budget is not enough for a robustness summary
    CHECK(run_cli(dir, "robustness --root outputs") == 2);
    REQUIRE(run_cli(dir, "interpret " + common + " --coreset outputs/synthetic/coresets/moderate_rho0.10.json") == 0);
    REQUIRE(run_cli(dir, "evaluate " + common + " --full " + full.string() +
                             " --features outputs/synthetic/ice/moderate/0.10") == 0);
    REQUIRE(run_cli(dir, "robustness --root outputs") == 0);
    const json rob = read_json(dir / "outputs" / "robustness.json");
    REQUIRE(rob["entries"].size() == 1);
    CHECK(rob["entries"][0]["budgets"].size() == 2);
    CHECK(slurp(dir / "outputs" / "robustness.txt").find("±") != std::string::npos);
  }
  SUBCASE("visualize") {
    REQUIRE(run_cli(dir, "visualize -d data --features " + full.string() + "," + core.string() +
                             " --size 24 -k 2 --out panel.png") == 0);
    CHECK(fs::exists(dir / "panel.png"));
    const json meta = read_json(dir / "panel.json");
    CHECK(meta["colormap"] == "inferno");
    CHECK(meta["rows"].size() == 2);
    const std::string first = slurp(dir / "panel.png");
    REQUIRE(run_cli(dir, "visualize -d data --features " + full.string() + "," + core.string() +
                             " --size 24 -k 2 --out panel.png") == 0);
    CHECK(slurp(dir / "panel.png") == first);
  }
}

TEST_CASE("exit codes") {
  const fs::path dir = fixture("cli_exit");
  CHECK(run_cli(dir, "--help") == 0);
  CHECK(run_cli(dir, "") == 1);
  CHECK(run_cli(dir, "interpret --no-such-flag") == 1);
  CHECK(run_cli(dir, "interpret -d missing") == 2);
  CHECK(run_cli(dir, "select -d data --budgets 1.5") == 2);
  CHECK(run_cli(dir, "select -d data --selectors kcenter") == 2);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK(run_cli(dir, "interpret -d data -c bad.json") == 2);
  // a learning rate this large overflows the first update
  std::ofstream(dir / "diverge.json") << R"({"interpretation": {"topic": {"lr": 1e300, "m": 4}}})";
  CHECK(run_cli(dir, "interpret -d data -m topic -c diverge.json") == 3);
}

}  // TEST_SUITE
