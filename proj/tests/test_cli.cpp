#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cbfsos/sim.hpp"
#include "cli.hpp"
#include "doctest.h"

using namespace cbfsos;
namespace fs = std::filesystem;

namespace {

const std::string kSource = CBFSOS_SOURCE_DIR;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cbfsos");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbfsos_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sha256 of known strings") {
  CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("filter-eval on a grid") {
  const Run r = run_cli({"filter-eval", "--grid=-5,5,0.5"});
  REQUIRE(r.code == cli::kOk);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 442);
  CHECK(rows[0] == "x1,x2,region,uprime1,delta,objective");
  std::set<std::string> regions;
  for (std::size_t i = 1; i < rows.size(); ++i) regions.insert(split(rows[i])[2]);
  CHECK(regions.size() >= 2);
}

TEST_CASE("filter-eval at the origin") {
  const Run r = run_cli({"filter-eval", "--state", "0,0"});
  REQUIRE(r.code == cli::kOk);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 2);
  CHECK(std::stod(split(rows[1])[3]) == 0.0);
}

TEST_CASE("input errors exit with 2") {
  const fs::path dir = scratch("bad");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"n\": 2,";
  CHECK(run_cli({"filter-eval", "--model", (dir / "bad.json").string(), "--state", "0,0"}).code == cli::kInputError);
  CHECK(run_cli({"filter-eval", "--state", "0,zero"}).code == cli::kInputError);
  CHECK(run_cli({"filter-eval", "--state", "0,0,0"}).code == cli::kInputError);
  CHECK(run_cli({"filter-eval"}).code == cli::kInputError);
  CHECK(run_cli({"filter-eval", "--state", "0,0", "--variant", "other"}).code == cli::kInputError);
  CHECK(run_cli({"no-such-command"}).code == cli::kInputError);
  CHECK(run_cli({"simulate", "--x0", "1,1", "--dt", "0"}).code == cli::kInputError);
  CHECK(run_cli({"simulate"}).code == cli::kInputError);
  CHECK(run_cli({"verify-cert", "--cert", (dir / "missing.json").string()}).code == cli::kInputError);
  // A regular file where the output directory should go.
  std::ofstream(dir / "file") << "x";
  CHECK(run_cli({"reproduce-example", "--out", (dir / "file").string()}).code == cli::kInputError);
}

TEST_CASE("simulate with zero horizon") {
  const fs::path dir = scratch("sim0");
  const Run r = run_cli({"simulate", "--x0", "1,1", "--horizon", "0", "--out", dir.string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(lines(read_file(dir / "trajectory.csv")).size() == 2);
  CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("simulate the shipped config") {
  const fs::path dir = scratch("simcfg");
  const Run r = run_cli({"simulate", "--config", kSource + "/configs/simulate_example.json", "--out", dir.string()});
  REQUIRE(r.code == cli::kOk);
  const auto report = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(report.at("converged").get<bool>());
  CHECK(report.at("min_h").get<double>() > 0.0);
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("inputs").size() == 2);
  for (const auto& f : manifest.at("outputs")) {
    CHECK(f.at("sha256") == cli::sha256_file(dir / f.at("path").get<std::string>()));
  }
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(dir)) manifests += e.path().filename() == "manifest.json";
  CHECK(manifests == 1);
}

TEST_CASE("trajectory and report formats match the golden files") {
  const fs::path dir = scratch("golden");
  REQUIRE(run_cli({"simulate", "--model", kSource + "/models/example_vi_stabilized.json", "--x0", "1,1", "--horizon",
                   "0.005", "--out", dir.string()})
              .code == cli::kOk);
  CHECK(read_file(dir / "trajectory.csv") == read_file(kSource + "/tests/golden/trajectory_short.csv"));
  CHECK(read_file(dir / "report.json") == read_file(kSource + "/tests/golden/report_short.json"));
}

TEST_CASE("verify-cert accepts good and rejects tampered certificates") {
  const fs::path dir = scratch("cert");
  REQUIRE(run_cli({"robust-cbf", "--ball-radius", "5", "--deg-lambda", "0", "--deg-lambda1", "1", "--max-rounds", "0",
                   "--out", dir.string()})
              .code == cli::kOk);
  const fs::path result = dir / "robust_cbf.json";
  CHECK(run_cli({"verify-cert", "--cert", result.string()}).code == cli::kOk);
  auto j = nlohmann::json::parse(read_file(result));
  auto& cert = j.at("certificate");
  cert.at("blocks").at(0).at("gram").at(0) = -5.0;
  std::ofstream(dir / "tampered.json") << j.dump();
  CHECK(run_cli({"verify-cert", "--cert", (dir / "tampered.json").string()}).code == cli::kPropertyViolation);
}

TEST_CASE("reproduce-example is deterministic") {
  const fs::path a = scratch("rep_a");
  const fs::path b = scratch("rep_b");
  const Run ra = run_cli({"reproduce-example", "--out", a.string()});
  const Run rb = run_cli({"reproduce-example", "--out", b.string()});
  REQUIRE(ra.code == cli::kOk);
  REQUIRE(rb.code == cli::kOk);
  const auto ma = nlohmann::json::parse(read_file(a / "manifest.json"));
  const auto mb = nlohmann::json::parse(read_file(b / "manifest.json"));
  CHECK(ma.at("outputs") == mb.at("outputs"));
  CHECK(ma.at("inputs") == mb.at("inputs"));
  for (const auto& f : ma.at("outputs")) {
    const std::string name = f.at("path");
    CHECK(read_file(a / name) == read_file(b / name));
  }
  const auto cmp = nlohmann::json::parse(read_file(a / "comparison.json"));
  CHECK(cmp.at("eta_poly").get<double>() >= cmp.at("eta_const").get<double>() - 1e-6);
}
