#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "breakdown/sample.hpp"
#include "breakdown/simulation.hpp"

namespace {

std::string cli_path() {
  const char* env = std::getenv("BREAKDOWN_CLI");
  return env ? env : "";
}

int run(const std::string& args) {
  const int status = std::system((cli_path() + " " + args).c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("estimate subcommand produces a valid report", "[cli]") {
  if (cli_path().empty()) {
    SKIP("BREAKDOWN_CLI not set");
  }
  const std::string out = "/tmp/breakdown_cli_estimate.json";
  const int rc = run(
      "estimate --design uniform-mean --n 5000 --seed 4 "
      "--hypothesis '{\"box\": [[0.38, 0.62]], \"null\": [{\"a\": [1.0], \"c\": 0.4}]}' "
      "--out " + out + " > /dev/null 2>/dev/null");
  REQUIRE(rc == 0);
  const auto report = nlohmann::json::parse(slurp(out));
  CHECK(report.contains("config"));
  CHECK(report["result"]["delta_hat"].is_number());
  CHECK(report["result"]["ci_lower"].is_number());
  CHECK(report["result"]["delta_hat"].get<double>() > 0.1);
  CHECK(report["config"]["alpha"].get<double>() == 0.05);
}

TEST_CASE("config errors exit 1 with machine-readable JSON", "[cli]") {
  if (cli_path().empty()) {
    SKIP("BREAKDOWN_CLI not set");
  }
  const std::string err = "/tmp/breakdown_cli_err.json";
  const int rc = run(
      "estimate --design uniform-mean --n 800 --seed 4 "
      "--hypothesis '{\"box\": [[0.45, 0.55]], \"null\": [{\"a\": [1.0], \"c\": 0.1}]}' "
      "> /dev/null 2> " + err);
  CHECK(rc == 1);
  const auto parsed = nlohmann::json::parse(slurp(err));
  CHECK(parsed["error"]["code"].get<std::string>() == "empty-null-region");

  CHECK(run("estimate --design no-such-design --n 100 > /dev/null 2>/dev/null") == 1);
  CHECK(run("estimate --n 100 > /dev/null 2>/dev/null") == 1);  // neither data nor design
}

TEST_CASE("bound subcommand on a csv fixture", "[cli]") {
  if (cli_path().empty()) {
    SKIP("BREAKDOWN_CLI not set");
  }
  const auto sample = breakdown::dgp_linear(20000, 8);
  breakdown::save_csv(sample, "/tmp/breakdown_cli_linear.csv");
  const std::string out = "/tmp/breakdown_cli_bound.json";
  const int rc = run("bound --data /tmp/breakdown_cli_linear.csv --out " + out +
                     " > /dev/null 2>/dev/null");
  REQUIRE(rc == 0);
  const auto report = nlohmann::json::parse(slurp(out));
  const double h2 = report["selection_bound"]["h2_lower_bound"].get<double>();
  CHECK(h2 > 0.05);
  CHECK(h2 < 0.11);
}

TEST_CASE("reports are byte-identical across repeat runs", "[cli]") {
  if (cli_path().empty()) {
    SKIP("BREAKDOWN_CLI not set");
  }
  const std::string cmd =
      "simulate --design uniform-mean --n 400 --reps 5 --seed 11 --threads %T "
      "--out /tmp/breakdown_cli_sim_%T.json > /dev/null 2>/dev/null";
  auto with_threads = [&](const std::string& t) {
    std::string c = cmd;
    std::size_t pos;
    while ((pos = c.find("%T")) != std::string::npos) c.replace(pos, 2, t);
    return c;
  };
  REQUIRE(run(with_threads("1")) == 0);
  REQUIRE(run(with_threads("8")) == 0);
  const std::string a = slurp("/tmp/breakdown_cli_sim_1.json");
  std::string b = slurp("/tmp/breakdown_cli_sim_8.json");
  // The thread count is part of the echoed config; normalize it out.
  auto ja = nlohmann::json::parse(a);
  auto jb = nlohmann::json::parse(b);
  ja["config"].erase("threads");
  jb["config"].erase("threads");
  CHECK(ja.dump() == jb.dump());
}

TEST_CASE("oracle-check prints a pass table", "[cli]") {
  if (cli_path().empty()) {
    SKIP("BREAKDOWN_CLI not set");
  }
  const std::string out = "/tmp/breakdown_cli_oracle.json";
  const int rc = run("oracle-check --out " + out + " > /dev/null 2>/dev/null");
  REQUIRE(rc == 0);
  const auto report = nlohmann::json::parse(slurp(out));
  CHECK(report["all_pass"].get<bool>());
}
