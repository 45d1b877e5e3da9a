// stochflow <experiment> --config <file> [--out <dir>] [--workers <k>]
// stochflow validate --config <file>
//
// Exit codes: 0 all hard verdicts pass, 2 a hard verdict failed,
// 1 usage or configuration error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "stochflow/experiment.hpp"

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int report_config_error(const stochflow::ConfigError& e) {
  for (const auto& d : e.diagnostics()) std::cerr << "error: " << d << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulate and check stochastic flows driven by regularized Wiener paths"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int workers = 0;
  bool workers_given = false;

  auto* validate = app.add_subcommand("validate", "check a config file without running it");
  validate->add_option("--config", config_path, "experiment config (JSON)")->required();

  for (const auto& name : stochflow::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--workers", workers, "worker threads (0: all cores)")
        ->check(CLI::NonNegativeNumber)
        ->each([&](const std::string&) { workers_given = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  if (chosen == validate) {
    const auto diags = stochflow::validate_config_file(config_path);
    for (const auto& d : diags) std::cerr << "error: " << d << "\n";
    if (diags.empty()) std::cout << config_path << ": ok\n";
    return diags.empty() ? 0 : 1;
  }

  try {
    auto cfg = stochflow::load_config(config_path);
    if (const char* env = std::getenv("STOCHFLOW_WORKERS"); env && *env) {
      try {
        cfg.workers = std::stoi(env);
      } catch (const std::exception&) {
        throw stochflow::ConfigError({"STOCHFLOW_WORKERS: expected an integer"});
      }
    }
    if (workers_given) cfg.workers = workers;
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    const auto outcome = stochflow::run_experiment(chosen->get_name(), cfg, utc_timestamp());
    for (const auto& r : outcome.report["reports"]) {
      std::cout << (r["verdict"] == "pass" ? "PASS " : "FAIL ") << r["kind"].get<std::string>() << " "
                << r["name"].get<std::string>() << "  lhs=" << r["lhs"].dump() << " rhs=" << r["rhs"].dump() << "\n";
      for (const auto& note : r["notes"]) std::cout << "    " << note.get<std::string>() << "\n";
    }
    std::cout << "report: " << cfg.output_dir << "/" << chosen->get_name() << ".json\n";
    return outcome.exit_code;
  } catch (const stochflow::ConfigError& e) {
    return report_config_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
