#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "wce/wce.hpp"

using namespace wce;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_ou(const std::string& dir) {
  auto c = parse_config_string("kind = \"ou\"\nseed = 5\n[grid]\nT = 1.0\ndt = 0.00390625\n[chaos]\nn_time_modes = 16\n"
                               "[paths]\nn_paths = 40\n");
  c.output_dir = (fs::path("test_experiment_out") / dir).string();
  fs::remove_all(c.output_dir);
  return c;
}

// config.toml records output_dir, which differs between the compared runs.
std::map<std::string, std::string> hashes(const RunManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& f : m.files) {
    if (f.path != "config.toml") out[f.path] = f.hash;
  }
  return out;
}

}  // namespace

TEST_CASE("git blob hashes match git") {
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("repeated runs produce identical files") {
  const auto a = run_experiment(small_ou("a"));
  const auto b = run_experiment(small_ou("b"));
  CHECK(a.status == "ok");
  CHECK(hashes(a) == hashes(b));
  CHECK(a.metrics == b.metrics);
  for (const auto& f : a.files) {
    CHECK(file_hash(fs::path("test_experiment_out/a") / f.path) == f.hash);
  }
}

TEST_CASE("thread count does not change outputs") {
  set_num_threads(1);
  const auto a = run_experiment(small_ou("t1"));
  set_num_threads(3);
  const auto b = run_experiment(small_ou("t3"));
  set_num_threads(0);
  CHECK(hashes(a) == hashes(b));
}

TEST_CASE("every csv has a header and every array a sidecar") {
  const auto m = run_experiment(small_ou("layout"));
  const fs::path dir = "test_experiment_out/layout";
  bool saw_csv = false, saw_bin = false;
  for (const auto& f : m.files) {
    const fs::path p = dir / f.path;
    REQUIRE(fs::exists(p));
    if (p.extension() == ".csv") {
      saw_csv = true;
      std::ifstream in(p);
      std::string header;
      std::getline(in, header);
      CHECK(!header.empty());
      CHECK(std::isalpha(static_cast<unsigned char>(header[0])));
    }
    if (p.extension() == ".bin") {
      saw_bin = true;
      CHECK(fs::exists(sidecar_path(p)));
      const auto arr = read_array(p);
      CHECK(!arr.shape.empty());
    }
  }
  CHECK(saw_csv);
  CHECK(saw_bin);
  CHECK(m.metrics.contains("relative_l2"));
  CHECK(m.metrics.contains("variance_chaos"));
}

TEST_CASE("report is regenerated byte for byte from the manifest") {
  const auto m = run_experiment(small_ou("report"));
  const fs::path dir = "test_experiment_out/report";
  const auto back = read_manifest(dir / "manifest.json");
  CHECK(emit_report(back) == read_file(dir / "report.txt"));
  CHECK(back.to_json() == m.to_json());
}

TEST_CASE("report handles empty metrics and sorts sweeps") {
  RunManifest m;
  m.kind = "sensitivity";
  const auto empty = emit_report(m);
  CHECK(empty.find("metrics") == std::string::npos);
  CHECK(empty.find("status: running") != std::string::npos);
  m.sweep_axis = "n_time_modes";
  m.sweep = {{32, 0.1, 0.0}, {8, 0.3, 0.0}, {16, 0.2, 0.0}};
  const auto r = emit_report(m);
  const auto p8 = r.find("\n  8 "), p16 = r.find("\n  16 "), p32 = r.find("\n  32 ");
  REQUIRE(p8 != std::string::npos);
  REQUIRE(p16 != std::string::npos);
  REQUIRE(p32 != std::string::npos);
  CHECK(p8 < p16);
  CHECK(p16 < p32);
}

TEST_CASE("failed stages leave a manifest behind") {
  auto c = parse_config_string("kind = \"wick_drift\"\n[grid]\nT = 1.0\ndt = 0.01\n[chaos]\nbasis = \"trig\"\n"
                               "n_time_modes = 2\nmax_order = 1\n[model]\ncoefficients = [0.0, 800.0]\nsigma = 0.0\nx0 = 1.0\n");
  c.output_dir = "test_experiment_out/failed";
  fs::remove_all(c.output_dir);
  try {
    run_experiment(c);
    FAIL("expected a numerical failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
    CHECK(std::string(e.what()).find("stage '") != std::string::npos);
  }
  const auto m = read_manifest("test_experiment_out/failed/manifest.json");
  CHECK(m.status == "failed");
  CHECK(!m.failed_stage.empty());
  CHECK(m.failed_stage != "setup");
  CHECK(read_file("test_experiment_out/failed/report.txt").find("failed stage: " + m.failed_stage) != std::string::npos);
}

TEST_CASE("enkf manifest carries the estimates") {
  auto c = default_config(ExperimentKind::enkf);
  c.enkf.n_seeds = 2;
  c.enkf.ensemble_size = 60;
  c.output_dir = "test_experiment_out/enkf";
  const auto m = run_experiment(c);
  CHECK(m.metrics.contains("theta"));
  CHECK(m.metrics.contains("mu"));
  CHECK(m.metrics.contains("cov_trace_monotone"));
  CHECK(fs::exists("test_experiment_out/enkf/enkf_seed0.csv"));
  CHECK(fs::exists("test_experiment_out/enkf/estimates.csv"));
}

TEST_CASE("file-backed stages match the composite pipeline") {
  auto c = small_ou("stages");
  fs::create_directories(c.output_dir);
  stages::simulate(c);
  stages::features(c);
  stages::solve(c);
  stages::reconstruct(c);
  const double solved = stages::evaluate(c);
  const auto composite = run_experiment(small_ou("stages_composite"));
  CHECK(solved == Catch::Approx(composite.metrics["relative_l2"].get<double>()).epsilon(1e-12));
  stages::fit(c);
  stages::reconstruct(c);
  CHECK(stages::evaluate(c) < 0.2);
  CHECK(fs::exists(fs::path(c.output_dir) / "evaluation.json"));

  auto h = default_config(ExperimentKind::heston_extrapolation);
  CHECK_THROWS_AS(stages::simulate(h), Error);
  auto p = default_config(ExperimentKind::phi41_estimation);
  CHECK_THROWS_AS(stages::solve(p), Error);
}
