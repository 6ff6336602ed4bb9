#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wce/wce.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (TOML)")->required();
  cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->add_option("--out", f.out, "override the output directory");
  cmd->add_option("--threads", f.threads, "worker threads (default: WCE_THREADS or 1)");
}

wce::ExperimentConfig load(const CommonFlags& f) {
  if (f.threads) {
    if (*f.threads == 0) throw wce::Error(wce::ErrorKind::config, "--threads must be >= 1");
    wce::set_num_threads(*f.threads);
  }
  wce::ExperimentConfig c = wce::parse_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.output_dir = *f.out;
  wce::validate_config(c);
  return c;
}

void require_kind(const wce::ExperimentConfig& c, wce::ExperimentKind k, const char* cmd) {
  if (c.kind != k) {
    throw wce::Error(wce::ErrorKind::config, std::string("'") + cmd + "' needs kind = \"" +
                                                 std::string(wce::to_string(k)) + "\", config has \"" +
                                                 std::string(wce::to_string(c.kind)) + "\"");
  }
}

int run_and_report(const wce::ExperimentConfig& c) {
  const wce::RunManifest m = wce::run_experiment(c);
  std::cout << wce::emit_report(m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wiener chaos expansion experiments"};
  app.set_version_flag("--version", std::string(wce::kLibraryVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  auto* simulate = app.add_subcommand("simulate", "simulate noise and reference paths");
  auto* features = app.add_subcommand("features", "compute Wick features from simulated noise");
  auto* solve = app.add_subcommand("solve", "solve the propagator equations");
  auto* fit = app.add_subcommand("fit", "estimate propagators from reference paths");
  auto* reconstruct = app.add_subcommand("reconstruct", "rebuild paths from propagators and features");
  auto* evaluate = app.add_subcommand("evaluate", "relative L2 of the reconstruction");
  auto* enkf = app.add_subcommand("enkf", "run the EnKF parameter estimation experiment");
  auto* sweep = app.add_subcommand("sweep", "run a sensitivity sweep");
  auto* run = app.add_subcommand("run", "run the full pipeline for the configured experiment");
  auto* report = app.add_subcommand("report", "print the report of a stored manifest");
  for (auto* cmd : {simulate, features, solve, fit, reconstruct, evaluate, enkf, sweep, run}) add_common(cmd, flags);
  std::string manifest_path;
  report->add_option("manifest", manifest_path, "manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      std::cout << wce::emit_report(wce::read_manifest(manifest_path));
      return 0;
    }
    const wce::ExperimentConfig c = load(flags);
    if (simulate->parsed()) {
      wce::stages::simulate(c);
    } else if (features->parsed()) {
      wce::stages::features(c);
    } else if (solve->parsed()) {
      wce::stages::solve(c);
    } else if (fit->parsed()) {
      wce::stages::fit(c);
    } else if (reconstruct->parsed()) {
      wce::stages::reconstruct(c);
    } else if (evaluate->parsed()) {
      std::cout << "relative_l2 " << wce::format_double(wce::stages::evaluate(c)) << '\n';
    } else if (enkf->parsed()) {
      require_kind(c, wce::ExperimentKind::enkf, "enkf");
      return run_and_report(c);
    } else if (sweep->parsed()) {
      require_kind(c, wce::ExperimentKind::sensitivity, "sweep");
      return run_and_report(c);
    } else if (run->parsed()) {
      return run_and_report(c);
    }
    return 0;
  } catch (const wce::Error& e) {
    std::cerr << "wce: " << e.what() << '\n';
    return wce::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "wce: " << e.what() << '\n';
    return 1;
  }
}
