#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "stochflow/experiment.hpp"

using namespace stochflow;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> diagnose(const json& j) {
  std::vector<std::string> diags;
  parse_config(j, diags);
  return diags;
}

bool mentions(const std::vector<std::string>& diags, const std::string& key) {
  return std::any_of(diags.begin(), diags.end(), [&](const std::string& d) { return d.rfind(key, 0) == 0; });
}

json small_config() {
  return json::parse(R"({
    "family": {"name": "log-growth", "params": {"d": 2, "n": 2}},
    "seed": 3, "paths": 120, "point": [1.0, 0.0],
    "levels": [3, 5], "n_max": 9, "moment_orders": [2],
    "grid": {"kind": "spiral", "count": 6}, "radius": 2.0
  })");
}

json without_timestamp(json j) {
  j.erase("timestamp");
  return j;
}

}  // namespace

TEST_CASE("a valid config has no diagnostics") {
  CHECK(diagnose(small_config()).empty());
  for (const auto& entry : fs::directory_iterator(STOCHFLOW_CONFIG_DIR)) {
    CAPTURE(entry.path().string());
    CHECK(validate_config_file(entry.path().string()).empty());
  }
}

TEST_CASE("diagnostics name the offending key") {
  auto j = small_config();
  j.erase("seed");
  CHECK(mentions(diagnose(j), "seed"));

  j = small_config();
  j["levels"] = json::array({4, 8});
  j["n_max"] = 10;
  const auto rule = diagnose(j);
  CHECK(mentions(rule, "levels"));
  CHECK(rule.front().find("reference rule") != std::string::npos);

  j = small_config();
  j["sede"] = 3;
  CHECK(mentions(diagnose(j), "sede"));

  j = small_config();
  j["paths"] = "many";
  CHECK(mentions(diagnose(j), "paths"));

  j = small_config();
  j["hypothesis"] = {{"radii", {4, 8}}};
  CHECK(mentions(diagnose(j), "hypothesis.radii"));

  j = small_config();
  j["inequalities"] = {"not-a-bound"};
  CHECK(mentions(diagnose(j), "inequalities"));

  j = small_config();
  j["family"]["params"]["bogus"] = 1.0;
  CHECK_FALSE(diagnose(j).empty());

  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  CHECK_FALSE(validate_config_file("/nonexistent/config.json").empty());
}

TEST_CASE("family construction") {
  CHECK(make_family("geometric", {{"d", 1}, {"sigma", 1.0}}).dim_state() == 1);
  CHECK(make_family("log-growth", json::object()).dim_state() == 2);
  CHECK_THROWS(make_family("no-such-family", json::object()));
  CHECK_THROWS(make_family("geometric", {{"sigma", "one"}}));
}

TEST_CASE("reports do not depend on the worker count") {
  std::vector<std::string> diags;
  auto cfg = parse_config(small_config(), diags);
  REQUIRE(diags.empty());
  for (const std::string experiment : {"moments", "convergence"}) {
    cfg.workers = 1;
    const auto one = compute_experiment(experiment, cfg);
    for (int workers : {4, 8}) {
      cfg.workers = workers;
      const auto other = compute_experiment(experiment, cfg);
      CHECK(without_timestamp(other.report) == without_timestamp(one.report));
      CHECK(other.artifacts == one.artifacts);
      CHECK(other.exit_code == one.exit_code);
    }
  }
}

TEST_CASE("run writes a manifest of parseable files") {
  std::vector<std::string> diags;
  auto cfg = parse_config(small_config(), diags);
  REQUIRE(diags.empty());
  const auto dir = fs::temp_directory_path() / "stochflow_test_experiment";
  fs::remove_all(dir);
  cfg.output_dir = dir.string();
  const auto out = run_experiment("moments", cfg, "2000-01-01T00:00:00Z");
  CHECK(out.report.at("timestamp") == "2000-01-01T00:00:00Z");
  CHECK(out.report.at("experiment") == "moments");
  CHECK(out.report.at("seed") == 3);
  REQUIRE_FALSE(out.files.empty());
  CHECK(std::find(out.files.begin(), out.files.end(), "moments.json") != out.files.end());
  for (const auto& f : out.files) {
    CAPTURE(f);
    REQUIRE(fs::exists(dir / f));
    if (f.ends_with(".json")) {
      std::ifstream is(dir / f);
      const auto parsed = json::parse(is);
      CHECK(without_timestamp(parsed) == without_timestamp(out.report));
    }
  }
  CHECK_THROWS(run_experiment("nonsense", cfg));
  fs::remove_all(dir);
}

TEST_CASE("hypothesis check verdicts set the exit code") {
  const auto linear = load_config(std::string(STOCHFLOW_CONFIG_DIR) + "/hypothesis_linear_diffusion.json");
  const auto bad = compute_experiment("hypothesis-check", linear);
  CHECK(bad.exit_code == 2);
  CHECK(bad.report.at("verdict") == "fail");
  const auto& failed = bad.report.at("failed");
  CHECK(std::find(failed.begin(), failed.end(), "hypothesis:sup_diffusion_sq") != failed.end());

  const auto log_growth = load_config(std::string(STOCHFLOW_CONFIG_DIR) + "/hypothesis_log_growth.json");
  CHECK(compute_experiment("hypothesis-check", log_growth).exit_code == 0);
}
