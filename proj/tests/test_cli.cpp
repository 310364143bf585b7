#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anml/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "anml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = anml::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("anml-cli-tests-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

json error_line(const CliResult& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

struct DataDirEnv {
  DataDirEnv() { ::setenv("ANML_DATA_DIR", ANML_TEST_DATA_DIR, 1); }
};
const DataDirEnv data_dir_env;

}  // namespace

TEST_CASE("train on iris writes the documented artifacts") {
  const fs::path dir = scratch("train");
  const auto r = run_cli({"train", "--dataset", "iris", "--learner", "lanml-minus", "--gamma1", "-1", "--gamma2", "1",
                          "--trials", "3", "--seed", "7", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"summary.json", "accuracy.csv", "trials.csv", "metric.json", "trace.csv", "manifest.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("mean").get<double>() > 0.8);
  CHECK(summary.contains("std"));
  CHECK(summary.contains("best_k_histogram"));
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("seed") == 7);
  CHECK(manifest.at("dataset").at("sha256") == anml::cli::sha256_file(fs::path(ANML_TEST_DATA_DIR) / "iris.csv"));
  CHECK(manifest.at("config").at("gamma1") == -1.0);

  const fs::path again = scratch("train-again");
  const auto r2 = run_cli({"train", "--dataset", "iris", "--learner", "lanml-minus", "--gamma1", "-1", "--gamma2", "1",
                           "--trials", "3", "--seed", "7", "--out", again.string()});
  REQUIRE(r2.code == 0);
  CHECK(slurp(dir / "summary.json") == slurp(again / "summary.json"));
  CHECK(slurp(dir / "accuracy.csv") == slurp(again / "accuracy.csv"));

  // The learned metric can be evaluated and analyzed.
  const fs::path ev = scratch("eval");
  const auto e = run_cli({"eval", "--dataset", "iris", "--metric", (dir / "metric.json").string(), "--trials", "2",
                          "--out", ev.string()});
  CHECK_MESSAGE(e.code == 0, e.err);
  const fs::path an = scratch("analyze-metric");
  const auto a = run_cli({"analyze", "--dataset", "iris", "--metric", (dir / "metric.json").string(), "--similars", "3",
                          "--out", an.string()});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const json analysis = json::parse(slurp(an / "analysis.json"));
  CHECK(analysis.contains("lipschitz_lower_bound"));
  CHECK(analysis.contains("class_gap_projected"));
}

TEST_CASE("usage and validation errors exit 2") {
  auto r = run_cli({"train", "--dataset", "no-such-dataset", "--out", scratch("missing").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("dataset not found") != std::string::npos);
  CHECK(error_line(r).at("exit_code") == 2);

  r = run_cli({"train", "--dataset", "iris", "--gamma2", "-1", "--trials", "1", "--out", scratch("gamma").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("gamma2") != std::string::npos);

  r = run_cli({"train", "--dataset", "iris", "--bogus"});
  CHECK(r.code == 2);
  r = run_cli({"analyze", "--dataset", "iris", "--trials", "3"});
  CHECK(r.code == 2);
  r = run_cli({});
  CHECK(r.code == 2);
  r = run_cli({"train", "--dataset", "iris", "--k-max", "41"});
  CHECK(r.code == 2);

  const fs::path dir = scratch("empty");
  write(dir / "empty.csv", "");
  r = run_cli({"analyze", "--dataset", (dir / "empty.csv").string(), "--out", dir.string()});
  CHECK(r.code == 2);
}

TEST_CASE("config file precedence and key checking") {
  const fs::path dir = scratch("config");
  write(dir / "cfg.json", R"({"dataset": "iris", "trials": 2, "seed": 3, "learner": "identity"})");
  auto r = run_cli({"train", "--config", (dir / "cfg.json").string(), "--trials", "1", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("config").at("trials") == 1);
  CHECK(manifest.at("config").at("seed") == 3);
  CHECK(json::parse(slurp(dir / "summary.json")).at("per_trial").size() == 1);

  write(dir / "bad.json", R"({"dataset": "iris", "tirals": 2})");
  r = run_cli({"train", "--config", (dir / "bad.json").string()});
  CHECK(r.code == 2);
  write(dir / "wrong.json", R"({"dataset": "iris", "instances": 2})");
  r = run_cli({"train", "--config", (dir / "wrong.json").string()});
  CHECK(r.code == 2);
  write(dir / "broken.json", "{");
  r = run_cli({"train", "--config", (dir / "broken.json").string()});
  CHECK(r.code == 2);
}

TEST_CASE("analyze reports") {
  const fs::path dir = scratch("analyze");
  write(dir / "blobs.csv", "0,0,a\n0.1,0,a\n0,0.1,a\n5,5,b\n5.1,5,b\n5,5.1,b\n");
  auto r = run_cli({"analyze", "--dataset", (dir / "blobs.csv").string(), "--no-standardize", "--similars", "1",
                    "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  json a = json::parse(slurp(dir / "analysis.json"));
  CHECK(a.at("inseparability").at("fraction") == 0.0);
  CHECK(a.at("class_gap").at("delta").get<double>() > 0.0);

  write(dir / "line.csv", "0,A\n2,A\n1,B\n");
  r = run_cli({"analyze", "--dataset", (dir / "line.csv").string(), "--no-standardize", "--similars", "1",
               "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  a = json::parse(slurp(dir / "analysis.json"));
  CHECK(a.at("inseparability").at("fraction").get<double>() > 0.0);
}

TEST_CASE("losscheck") {
  const fs::path dir = scratch("losscheck");
  auto r = run_cli({"losscheck", "--out", dir.string()});
  CHECK_MESSAGE(r.code == 0, r.out);
  const json checks = json::parse(slurp(dir / "losscheck.json"));
  CHECK(checks.size() == 11);

  r = run_cli({"losscheck", "--corrupt", "danml_loss", "--only", "danml_loss"});
  CHECK(r.code == 1);
  const json msg = error_line(r);
  CHECK(msg.at("error") == "check_failed");
  CHECK(msg.at("failed") == json::array({"danml_loss"}));

  r = run_cli({"losscheck", "--only", "prop7"});
  CHECK(r.code == 0);
  CHECK(r.out.find("prop7") != std::string::npos);
  CHECK(r.out.find("danml_loss") == std::string::npos);

  r = run_cli({"losscheck", "--only", "nonsense"});
  CHECK(r.code == 2);
}

TEST_CASE("toy embedding training through the cli") {
  const fs::path dir = scratch("toy");
  auto r = run_cli({"train", "--learner", "danml", "--gamma1", "2", "--gamma2", "30", "--lambda1", "0.5", "--lambda2",
                    "0.55", "--steps", "50", "--seed", "1", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.err.find("gamma1") != std::string::npos);
  for (const char* f : {"summary.json", "loss_trace.csv", "embeddings.csv", "manifest.json"}) CHECK(fs::exists(dir / f));
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("final_loss").get<double>() < summary.at("initial_loss").get<double>());

  r = run_cli({"train", "--learner", "danml", "--lambda1", "0.6", "--lambda2", "0.5", "--steps", "5"});
  CHECK(r.code == 2);
}

TEST_CASE("fetch lists the manifest") {
  auto r = run_cli({"fetch", "--list"});
  CHECK(r.code == 0);
  CHECK(r.out.find("iris") != std::string::npos);
  CHECK(r.out.find("australian") != std::string::npos);
  r = run_cli({"fetch", "iris"});
  CHECK(r.code == 0);
  r = run_cli({"fetch", "unknown-set"});
  CHECK(r.code == 2);
  r = run_cli({"fetch"});
  CHECK(r.code == 2);
}

TEST_CASE("sha256 of a known string") {
  const fs::path dir = scratch("sha");
  write(dir / "abc.txt", "abc");
  CHECK(anml::cli::sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
