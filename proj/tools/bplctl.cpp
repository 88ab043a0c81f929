// bplctl: run simulation sweeps, native benchmarks and verification suites
// from a config file, or summarize their result files.

#include <CLI11.hpp>
#include <iostream>

#include "bpl/experiment.hpp"

namespace {

int run_mode(bpl::cli::Mode mode, const std::string& config, const bpl::cli::KeyValues& overrides) {
  using bpl::cli::ExitCode;
  try {
    bpl::cli::KeyValues flags = overrides;
    flags["mode"] = std::string(bpl::cli::to_string(mode));
    auto spec = config.empty() ? bpl::cli::build_spec({}, flags) : bpl::cli::load_spec(config, flags);
    return static_cast<int>(bpl::cli::run(spec, std::cerr));
  } catch (const bpl::cli::ConfigError& e) {
    for (const auto& f : e.fields()) std::cerr << "config error: " << f << "\n";
    return static_cast<int>(ExitCode::kConfigError);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batched priority lock experiments"};
  app.set_version_flag("--version", BPL_VERSION);
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string seeds;
  std::string format;
  unsigned threads = 0;
  bool traces = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value experiment file");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seeds", seeds, "comma-separated seed list");
    sub->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("--traces", traces, "also write raw per-request traces");
  };
  auto* sim = app.add_subcommand("sim", "simulated lock-ordering sweep");
  add_common(sim);
  sim->add_option("--threads", threads, "worker threads for the sweep (default: one per CPU)");
  auto* bench = app.add_subcommand("bench", "native uncontested and contended benchmarks");
  add_common(bench);
  auto* verify = app.add_subcommand("verify", "stress and interleaving-exploration suites");
  add_common(verify);
  auto* summarize = app.add_subcommand("summarize", "normalized comparison table from cell files");
  std::vector<std::string> inputs;
  summarize->add_option("files", inputs, "cells.csv or cells.json files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(bpl::cli::ExitCode::kConfigError);
  }

  if (summarize->parsed()) {
    try {
      bpl::cli::summarize(inputs, std::cout);
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return static_cast<int>(bpl::cli::ExitCode::kConfigError);
    }
  }

  bpl::cli::KeyValues overrides;
  if (!out.empty()) overrides["out"] = out;
  if (!seeds.empty()) overrides["seeds"] = seeds;
  if (!format.empty()) overrides["format"] = format;
  if (threads != 0) overrides["threads"] = std::to_string(threads);
  if (traces) overrides["traces"] = "true";

  const auto mode = sim->parsed() ? bpl::cli::Mode::kSim
                                  : bench->parsed() ? bpl::cli::Mode::kBench : bpl::cli::Mode::kVerify;
  return run_mode(mode, config, overrides);
}
