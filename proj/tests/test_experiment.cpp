#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfda/experiment/config.hpp"
#include "pfda/experiment/csv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Fresh scratch directory per call.
fs::path scratch(const std::string& name) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("pfda_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

struct Result {
  int code = -1;
  std::string err;
  fs::path out;
};

// Runs the CLI on `config` written into a scratch directory.
Result run_cli(const std::string& command, const json& config, const std::string& extra = "",
               const std::string& name = "run") {
  const fs::path dir = scratch(name);
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << config.dump(2);
  Result r;
  r.out = dir / "out";
  const std::string cmd = std::string("\"") + PFDA_CLI_PATH + "\" " + command + " --config \"" + cfg.string() +
                          "\" --out \"" + r.out.string() + "\" " + extra + " > \"" + (dir / "stdout").string() +
                          "\" 2> \"" + (dir / "stderr").string() + "\"";
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(dir / "stderr");
  return r;
}

json sv_filter_config() {
  return json::parse(R"({
    "seed": 20240601,
    "model": {"name": "stochastic_volatility", "phi": 0.9, "sigma": 0.3, "beta": 0.6},
    "algorithm": {"name": "bootstrap", "particles": 50},
    "data": {"simulate": {"T": 10}}
  })");
}

json lg_model() {
  return json::parse(R"({"name": "linear_gaussian", "transition": 0.7, "state_noise": 1,
                         "observation": 1, "obs_noise": 1})");
}

}  // namespace

TEST_CASE("missing model block is a config error naming the key") {
  json cfg = sv_filter_config();
  cfg.erase("model");
  const Result r = run_cli("filter", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("model") != std::string::npos);
}

TEST_CASE("SV bootstrap run writes one row per observation") {
  const Result r = run_cli("filter", sv_filter_config());
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(r.out / "filter.csv"));
  REQUIRE(rows.size() == 11);
  CHECK(rows[0] == "t,mean_1,q05_1,q95_1,ess,max_weight,log_lik_cum");
  CHECK(split(rows[1])[0] == "1");
  CHECK(split(rows[10])[0] == "10");
  CHECK(lines(slurp(r.out / "truth.csv")).size() == 11);
  CHECK(lines(slurp(r.out / "obs.csv"))[0] == "t,y_1");
  const json summary = json::parse(slurp(r.out / "summary.json"));
  CHECK(summary.contains("log_lik"));
  CHECK(summary.contains("runtime_seconds"));
}

TEST_CASE("CSV cells are 17-digit round-trip numbers or NA with LF endings") {
  const Result r = run_cli("filter", sv_filter_config());
  REQUIRE(r.code == 0);
  const std::string text = slurp(r.out / "filter.csv");
  CHECK(text.find('\r') == std::string::npos);
  CHECK(text.back() == '\n');
  const auto rows = lines(text);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (const auto& cell : split(rows[i])) {
      if (cell == "NA") continue;
      const double v = std::stod(cell);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      CHECK(cell == buf);
    }
  }
  CHECK(pfda::experiment::format_cell(std::nan("")) == "NA");
  CHECK(pfda::experiment::format_cell(0.1) == "0.10000000000000001");
}

TEST_CASE("runs are byte-identical across repeats and thread counts") {
  const Result a = run_cli("filter", sv_filter_config());
  const Result b = run_cli("filter", sv_filter_config());
  const Result c = run_cli("filter", sv_filter_config(), "--threads 3");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  REQUIRE(c.code == 0);
  CHECK(slurp(a.out / "filter.csv") == slurp(b.out / "filter.csv"));
  CHECK(slurp(a.out / "filter.csv") == slurp(c.out / "filter.csv"));
  const Result d = run_cli("filter", sv_filter_config(), "--seed 99");
  REQUIRE(d.code == 0);
  CHECK(slurp(a.out / "filter.csv") != slurp(d.out / "filter.csv"));
}

TEST_CASE("simulate with a single step") {
  json cfg = sv_filter_config();
  cfg["data"]["simulate"]["T"] = 1;
  cfg.erase("algorithm");
  const Result r = run_cli("simulate", cfg);
  REQUIRE(r.code == 0);
  const auto truth = lines(slurp(r.out / "truth.csv"));
  const auto obs = lines(slurp(r.out / "obs.csv"));
  CHECK(truth.size() == 2);
  CHECK(obs.size() == 2);
  CHECK(truth[0] == "t,x_1");
}

TEST_CASE("particle Gibbs needs a transition density") {
  const json cfg = json::parse(R"({
    "seed": 1,
    "model": {"name": "lorenz96", "dimension": 8},
    "algorithm": {"name": "pgibbs", "parameters": ["forcing"], "initial": [8], "prior": {"lower": [0], "upper": [20]},
                  "step_scale": [0.1], "particles": 10, "iterations": 5, "ancestor_sampling": true},
    "data": {"simulate": {"T": 5}}
  })");
  const Result r = run_cli("pgibbs", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("model") != std::string::npos);
}

TEST_CASE("runtime failures exit with 3 and report the step") {
  const fs::path dir = scratch("data");
  {
    std::ofstream f(dir / "obs.csv");
    f << "t,y_1\n1,0.5\n2,-0.1\n3,1e200\n4,0.2\n";
  }
  json cfg;
  cfg["seed"] = 4;
  cfg["model"] = lg_model();
  cfg["algorithm"] = json::parse(R"({"name": "bootstrap", "particles": 20})");
  cfg["data"] = {{"file", (dir / "obs.csv").string()}};
  const Result r = run_cli("filter", cfg);
  CHECK(r.code == 3);
  CHECK(r.err.find("step 3") != std::string::npos);

  json wild = cfg;
  wild["model"]["transition"] = 50;
  wild["algorithm"] = json::parse(R"({"name": "stochastic", "members": 10})");
  {
    std::ofstream f(dir / "far.csv");
    f << "t,y_1\n";
    for (int t = 1; t <= 10; ++t) f << t << ",NA\n";
  }
  wild["data"] = {{"file", (dir / "far.csv").string()}};
  const Result e = run_cli("enkf", wild);
  CHECK(e.code == 3);
  CHECK(e.err.find("step") != std::string::npos);
}

TEST_CASE("config validation names the offending key") {
  json cfg = sv_filter_config();
  cfg["algorithm"]["resample"] = "sometimes";
  Result r = run_cli("filter", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("resample") != std::string::npos);

  cfg = sv_filter_config();
  cfg["algorithm"] = json::parse(R"({"name": "fixed_lag", "particles": 20})");
  r = run_cli("smooth", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("lag") != std::string::npos);

  cfg = sv_filter_config();
  cfg["model"]["sigma"] = -0.3;
  r = run_cli("filter", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("model") != std::string::npos);

  cfg = sv_filter_config();
  cfg["algorithm"]["particles"] = 1;
  r = run_cli("filter", cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("particles") != std::string::npos);

  r = run_cli("filter", sv_filter_config(), "--threads 0");
  CHECK(r.code == 2);
  r = run_cli("bogus", sv_filter_config());
  CHECK(r.code == 2);
}

TEST_CASE("result tables of every command") {
  json cfg;
  cfg["seed"] = 8;
  cfg["model"] = lg_model();
  cfg["data"] = json::parse(R"({"simulate": {"T": 12}})");

  cfg["algorithm"] = json::parse(R"({"name": "ffbs", "particles": 40})");
  Result r = run_cli("smooth", cfg);
  REQUIRE(r.code == 0);
  auto rows = lines(slurp(r.out / "smooth.csv"));
  CHECK(rows[0] == "s,mean_1,q05_1,q95_1,unique_paths");
  CHECK(rows.size() == 14);

  cfg["algorithm"] = json::parse(R"({"name": "square_root", "members": 20})");
  r = run_cli("enkf", cfg);
  REQUIRE(r.code == 0);
  rows = lines(slurp(r.out / "enkf.csv"));
  CHECK(rows[0] == "t,mean_1,spread_1,rmse");
  CHECK(rows.size() == 13);

  cfg["algorithm"] = json::parse(R"({"name": "pmmh", "parameters": ["transition"], "initial": [0.5],
      "prior": {"lower": [0], "upper": [1]}, "step_scale": [0.1], "particles": 30, "iterations": 20})");
  r = run_cli("pmmh", cfg);
  REQUIRE(r.code == 0);
  rows = lines(slurp(r.out / "chain.csv"));
  CHECK(rows[0] == "iter,theta_1,log_lik_hat,accepted");
  CHECK(rows.size() == 22);
  CHECK(split(rows[1]).back() == "NA");

  cfg["algorithm"]["name"] = "pgibbs";
  r = run_cli("pgibbs", cfg);
  REQUIRE(r.code == 0);
  rows = lines(slurp(r.out / "chain.csv"));
  CHECK(rows.size() == 22);
  CHECK(split(rows[5])[2] == "NA");

  cfg["algorithm"] = json::parse(R"({"name": "tune-n", "particles": 20, "replicates": 5, "rounds": 2})");
  r = run_cli("tune-n", cfg);
  REQUIRE(r.code == 0);
  rows = lines(slurp(r.out / "tune.csv"));
  CHECK(rows[0] == "round,particles,log_lik_variance");
  CHECK(rows.size() == 3);
  CHECK(json::parse(slurp(r.out / "summary.json")).contains("recommended_particles"));
}

TEST_CASE("sample configs validate") {
  for (const auto& entry : fs::directory_iterator(PFDA_CONFIG_DIR)) {
    const json cfg = pfda::experiment::load_config(entry.path().string());
    CHECK(cfg.contains("model"));
    CHECK(cfg.contains("algorithm"));
  }
}
