#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "disco/error.hpp"
#include "disco/scenario.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 1;

int run(const std::string& config_path, std::uint64_t seed, const std::string& out_path, const std::string& trace_path,
        const std::string& until) {
  using namespace disco;
  scenario::Config config;
  std::optional<SimTime> stop;
  try {
    config = scenario::load_config(config_path);
    if (!until.empty()) stop = scenario::parse_sim_time(until);
  } catch (const Error& e) {
    std::cerr << "disco-sim: " << e.what() << "\n";
    return kConfigError;
  }

  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path, std::ios::binary);
    if (!trace) {
      std::cerr << "disco-sim: cannot write trace file " << trace_path << "\n";
      return kRuntimeError;
    }
  }
  try {
    auto metrics = scenario::run_scenario(config, seed, trace_path.empty() ? nullptr : &trace, stop);
    auto doc = metrics.to_json();
    if (out_path.empty() || out_path == "-") {
      std::cout << doc;
    } else {
      std::ofstream out(out_path, std::ios::binary);
      out << doc;
      if (!out) {
        std::cerr << "disco-sim: cannot write " << out_path << "\n";
        return kRuntimeError;
      }
    }
  } catch (const Error& e) {
    std::cerr << "disco-sim: " << e.what() << "\n";
    return e.code() == ErrorCode::kConfigInvalid ? kConfigError : kRuntimeError;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the DISco DDoS scenario on the deterministic simulator and writes metrics as JSON."};
  app.set_version_flag("--version", "disco-sim 0.1.0");

  std::string config_path, out_path, trace_path, until;
  std::uint64_t seed = 1;
  app.add_option("--config", config_path, "Scenario configuration (INI)");
  app.add_option("--seed", seed, "Run seed");
  app.add_option("--out", out_path, "Metrics output file; '-' or omitted writes to stdout");
  app.add_option("--trace", trace_path, "Simulator trace log");
  app.add_option("--until", until, "Stop at this simulated time (e.g. 8s, 2500ms, 1200000us)");

  auto* vocab = app.add_subcommand("vocab", "Print the scenario vocabulary tree");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  if (*vocab) {
    disco::scenario::build_vocabulary().dump(std::cout);
    return 0;
  }
  if (config_path.empty()) {
    std::cerr << "disco-sim: --config is required\n" << app.help();
    return kConfigError;
  }
  return run(config_path, seed, out_path, trace_path, until);
}
