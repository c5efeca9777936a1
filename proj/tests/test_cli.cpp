#include <doctest.h>

#include <cstdio>
#include <iostream>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ksrs/cli.hpp"

using namespace ksrs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// capture stdout across a dispatch call
struct CapturedRun {
  int code = 0;
  std::string out;
};

CapturedRun run(const std::vector<std::string>& args) {
  std::stringstream buffer;
  std::streambuf* old = std::cout.rdbuf(buffer.rdbuf());
  CapturedRun r;
  r.code = dispatch(args);
  std::cout.rdbuf(old);
  r.out = buffer.str();
  return r;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("ksrs_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("params prints the condition flags") {
  const CapturedRun r = run({"params", "--delta", "1e-4"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["eta_condition_holds"] == true);
  CHECK(j["second_moment_holds"] == true);
  CHECK(j["regime"] == "certified");
  CHECK(j["network"]["mu"][0] == "inf");

  const CapturedRun r2 = run({"params", "--delta", "0.1"});
  const json j2 = json::parse(r2.out);
  CHECK(j2["eta_condition_holds"] == false);
  CHECK(j2["beta1"].get<double>() == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("params rejects an out-of-range delta with exit 2") {
  CHECK(run({"params", "--delta", "0.6"}).code == 2);
}

TEST_CASE("unknown flags and missing subcommands exit 2") {
  CHECK(run({"params", "--delta", "0.1", "--bogus"}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({}).code == 2);
}

TEST_CASE("psi table keeps the telescoping error below 1e-10") {
  const fs::path dir = temp_dir("psi");
  const CapturedRun r = run({"psi", "--delta", "0.1", "--k-max", "1000", "--output-dir",
                             dir.string()});
  REQUIRE(r.code == 0);
  const json result = json::parse(slurp(dir / "psi" / "result.json"));
  CHECK(result["derived"]["max_rel_err"].get<double>() <= 1e-10);

  // csv artifact exists with the check column under threshold
  std::ifstream csv(dir / "psi" / "psi.csv");
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "k,psi_k,running_product,closed_form,rel_err");
  std::string line;
  while (std::getline(csv, line)) {
    const auto pos = line.rfind(',');
    CHECK(std::stod(line.substr(pos + 1)) <= 1e-10);
  }
}

TEST_CASE("simulate is deterministic and writes the trajectory schema") {
  const fs::path dir = temp_dir("sim");
  const std::vector<std::string> args{"simulate", "--delta", "0.2",    "--init",
                                      "0,0,0,1",  "--horizon", "100",  "--seed",
                                      "7",        "--output-dir", dir.string()};
  std::vector<std::string> first = args;
  first.push_back("--name");
  first.push_back("a");
  std::vector<std::string> second = args;
  second.push_back("--name");
  second.push_back("b");
  REQUIRE(run(first).code == 0);
  REQUIRE(run(second).code == 0);

  const std::string csv_a = slurp(dir / "a" / "trajectory.csv");
  const std::string csv_b = slurp(dir / "b" / "trajectory.csv");
  CHECK(csv_a == csv_b);
  CHECK(csv_a.rfind("t,q1,q2,q3,q4,kind,flushed1,flushed3\n", 0) == 0);

  json ja = json::parse(slurp(dir / "a" / "result.json"));
  json jb = json::parse(slurp(dir / "b" / "result.json"));
  ja.erase("runtime_seconds");
  jb.erase("runtime_seconds");
  ja["config"].erase("output-dir");
  jb["config"].erase("output-dir");
  ja.erase("artifacts");
  jb.erase("artifacts");
  CHECK(ja.dump() == jb.dump());
  CHECK(ja["derived"]["skip_free_violations"] == 0.0);
}

TEST_CASE("config file supplies defaults and flags override it") {
  const fs::path dir = temp_dir("cfg");
  const fs::path cfg_path = dir / "run.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"delta": 0.1, "k-max": 50})";
  }
  const CapturedRun from_file = run({"psi", "--config", cfg_path.string(), "--output-dir",
                                     dir.string(), "--name", "file"});
  REQUIRE(from_file.code == 0);
  const json jf = json::parse(slurp(dir / "file" / "result.json"));
  CHECK(jf["config"]["delta"] == 0.1);
  CHECK(jf["config"]["k-max"] == 50);

  // explicit flag wins over the file value
  const CapturedRun overridden =
      run({"psi", "--config", cfg_path.string(), "--k-max", "60", "--output-dir",
           dir.string(), "--name", "over"});
  REQUIRE(overridden.code == 0);
  const json jo = json::parse(slurp(dir / "over" / "result.json"));
  CHECK(jo["config"]["k-max"] == 60);
}

TEST_CASE("experiment subcommands write result.json with the config echo") {
  const fs::path dir = temp_dir("mm1");
  const CapturedRun r = run({"mm1", "--n", "5", "--mu", "1.5", "--reps", "500", "--seed",
                             "3", "--output-dir", dir.string()});
  REQUIRE(r.code == 0);
  const json j = json::parse(slurp(dir / "mm1" / "result.json"));
  CHECK(j["name"] == "mm1");
  CHECK(j["config"]["n"] == 5);
  CHECK(j["config"]["seed"] == 3);
  CHECK(j["estimates"].count("mean_T") == 1);
  CHECK(j["stderr"].count("mean_T") == 1);
  CHECK(j["version"].is_string());
  CHECK(fs::exists(dir / "mm1" / "mm1.csv"));
}

TEST_CASE("oversized simulations thin to a grid while keeping the log prefix") {
  const fs::path dir = temp_dir("thin");
  const CapturedRun r =
      run({"simulate", "--delta", "0.2", "--init", "0,0,0,5", "--horizon", "200",
           "--seed", "9", "--max-events", "50", "--grid-points", "16", "--output-dir",
           dir.string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "simulate" / "trajectory.csv"));
  CHECK(fs::exists(dir / "simulate" / "trajectory_grid.csv"));
  const json j = json::parse(slurp(dir / "simulate" / "result.json"));
  REQUIRE(!j["warnings"].empty());
  CHECK(j["warnings"][0].get<std::string>().find("truncated") != std::string::npos);
  // full log stops at the cap, grid covers the whole horizon
  std::ifstream csv(dir / "simulate" / "trajectory.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 50);
  std::ifstream grid_csv(dir / "simulate" / "trajectory_grid.csv");
  rows = -1;
  while (std::getline(grid_csv, line)) ++rows;
  CHECK(rows == 16);
}

TEST_CASE("tripping the event cap exits with code 3") {
  const fs::path dir = temp_dir("cap");
  // a 400-job drain cannot finish within 50 events
  const CapturedRun r = run({"drain", "--delta", "0.1", "--n", "400", "--reps", "2",
                             "--event-cap", "50", "--output-dir", dir.string()});
  CHECK(r.code == 3);
}

TEST_CASE("thread count does not change numeric output") {
  const fs::path dir = temp_dir("threads");
  for (const std::string t : {"1", "4"}) {
    REQUIRE(run({"holds", "--delta", "0.2", "--x4-list", "5", "--reps", "2000", "--seed",
                 "21", "--threads", t, "--output-dir", dir.string(), "--name",
                 "t" + t}).code == 0);
  }
  json j1 = json::parse(slurp(dir / "t1" / "result.json"));
  json j4 = json::parse(slurp(dir / "t4" / "result.json"));
  CHECK(j1["estimates"].dump() == j4["estimates"].dump());
  CHECK(j1["stderr"].dump() == j4["stderr"].dump());
  CHECK(slurp(dir / "t1" / "holds.csv") == slurp(dir / "t4" / "holds.csv"));
}
