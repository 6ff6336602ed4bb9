#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "wce/config.hpp"
#include "wce/experiment.hpp"

// File-backed pipeline stages for the single-model kinds. Each stage reads
// the previous stage's arrays from the output directory and writes its own.
namespace wce::stages {

inline bool supports_stages(ExperimentKind k) {
  return k == ExperimentKind::ou || k == ExperimentKind::gbm || k == ExperimentKind::wick_drift || is_spde(k);
}

inline void require_stages(const ExperimentConfig& c, const char* stage) {
  if (!supports_stages(c.kind)) {
    throw Error(ErrorKind::config, std::string("stage '") + stage + "' is not available for kind '" +
                                       std::string(to_string(c.kind)) + "'; use the composite command");
  }
}

inline std::size_t feature_components(const ExperimentConfig& c) {
  if (c.kind == ExperimentKind::phi41_estimation) return c.estimation.kl_modes;
  if (is_spde(c.kind)) return c.noise.n_modes;
  return 1;
}

inline std::size_t n_stage_paths(const ExperimentConfig& c) {
  return c.kind == ExperimentKind::phi41_estimation ? c.paths.n_train + c.paths.n_test : c.paths.n_paths;
}

inline IndexSetPtr stage_set(const ExperimentConfig& c) {
  return index_set(feature_components(c), c.chaos.n_time_modes, c.chaos.max_order);
}

inline fs::path dir_of(const ExperimentConfig& c) { return c.output_dir; }

// noise.bin (increments) and truth.bin (Euler-Maruyama reference).
inline void simulate(const ExperimentConfig& c) {
  require_stages(c, "simulate");
  const TimeGrid grid = c.time_grid();
  const std::size_t np = n_stage_paths(c);
  const nlohmann::json meta{{"seed", c.seed}, {"T", grid.horizon()}, {"n_steps", grid.n_steps()}};
  if (is_spde(c.kind)) {
    const HeatSpdeModel heat = heat_model(c);
    const QField q = simulate_q_brownian(heat.spectrum, grid, np, c.seed);
    const PointwiseDrift drift = c.kind == ExperimentKind::heat_spde ? PointwiseDrift{} : polynomial_drift(c.model.reaction);
    write_array(dir_of(c) / "noise.bin", q.modes.increments, meta);
    write_array(dir_of(c) / "truth.bin", simulate_em_spde(heat, q.field, grid, drift), meta);
    return;
  }
  const NoiseBatch noise = simulate_brownian(np, 1, grid, c.seed);
  Tensor3 truth;
  if (c.kind == ExperimentKind::wick_drift) {
    CallbackSdeModel cb;
    cb.x0 = {c.model.x0};
    const auto f = polynomial_drift(c.model.coefficients);
    cb.drift = [f](double, const double* x, double* out) { out[0] = f ? f(x[0]) : 0.0; };
    const double s = c.model.sigma;
    cb.diffusion = [s](double, const double*, double* out) { out[0] = s; };
    truth = simulate_em_sde(cb, noise);
  } else {
    truth = simulate_em_sde(affine_model(c), noise);
  }
  write_array(dir_of(c) / "noise.bin", noise.increments, meta);
  write_array(dir_of(c) / "truth.bin", truth, meta);
}

inline NoiseBatch load_noise(const ExperimentConfig& c) {
  const Tensor3 inc = to_tensor(read_array(dir_of(c) / "noise.bin"));
  const TimeGrid grid = c.time_grid();
  if (inc.dim(2) != grid.n_steps()) throw Error(ErrorKind::shape, "noise.bin does not match the configured grid");
  return NoiseBatch::from_increments(grid, c.seed, inc);
}

// features.bin: n_paths x |set| Wick monomials.
inline void features(const ExperimentConfig& c) {
  require_stages(c, "features");
  const NoiseBatch noise = load_noise(c);
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, c.time_grid());
  const auto set = stage_set(c);
  const GaussianCoords coords = leading_components(gaussian_coords(noise, basis), feature_components(c));
  write_array(dir_of(c) / "features.bin", wick_features(coords, set).values);
  auto out = open_output(dir_of(c) / "index_set.json");
  out << set->to_json().dump(1) << '\n';
}

inline WickFeatures load_features(const ExperimentConfig& c) {
  const auto set = stage_set(c);
  Matrix v = to_matrix(read_array(dir_of(c) / "features.bin"));
  if (static_cast<std::size_t>(v.cols()) != set->size()) {
    throw Error(ErrorKind::shape, "features.bin has " + std::to_string(v.cols()) + " columns, index set has " +
                                      std::to_string(set->size()));
  }
  return {set, std::move(v)};
}

inline void save_propagators(const ExperimentConfig& c, const Tensor3& values, const TimeGrid& g, const char* layout) {
  write_array(dir_of(c) / "propagators.bin", values,
              {{"T", g.horizon()}, {"n_steps", g.n_steps()}, {"layout", layout}, {"kind", to_string(c.kind)}});
}

// propagators.bin from the deterministic propagator equations.
inline void solve(const ExperimentConfig& c) {
  require_stages(c, "solve");
  if (c.kind == ExperimentKind::phi41_estimation) {
    throw Error(ErrorKind::config, "phi41_estimation propagators are estimated from data; use 'fit'");
  }
  const TimeGrid grid = c.time_grid();
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, grid);
  const auto set = stage_set(c);
  if (c.kind == ExperimentKind::heat_spde) {
    save_propagators(c, solve_heat_propagators(heat_model(c), basis, set, grid).values, grid, "alpha,time,x");
  } else if (c.kind == ExperimentKind::semilinear_spde) {
    const auto f = solve_semilinear_propagators({heat_model(c), c.model.reaction}, basis, set, grid,
                                                SplittingOptions{c.chaos.substeps});
    save_propagators(c, f.values, grid, "alpha,time,x");
  } else if (c.kind == ExperimentKind::wick_drift) {
    save_propagators(c, solve_wick_drift_propagators(wick_drift_model(c), basis, set, grid, {c.chaos.substeps}).values, grid,
                     "alpha,component,time");
  } else {
    save_propagators(c, solve_affine_propagators(affine_model(c), basis, set, grid, {c.chaos.substeps}).values, grid,
                     "alpha,component,time");
  }
}

// propagators.bin regressed from truth.bin on features.bin.
inline void fit(const ExperimentConfig& c) {
  require_stages(c, "fit");
  const Tensor3 truth = to_tensor(read_array(dir_of(c) / "truth.bin"));
  const WickFeatures f = load_features(c);
  const TimeGrid grid = c.time_grid();
  if (is_spde(c.kind)) {
    const auto field = fit_coefficient_field(truth, f, grid, c.fit_config());
    save_propagators(c, field.values, field.grid, "alpha,time,x");
  } else {
    const auto table = fit_propagators(truth, f, grid, c.fit_config());
    save_propagators(c, table.values, table.grid, "alpha,component,time");
  }
}

inline TimeGrid stored_grid(const ArrayFile& a) {
  try {
    return {a.meta.at("T").get<double>(), a.meta.at("n_steps").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, std::string("array sidecar lacks grid metadata: ") + e.what());
  }
}

// reconstruction.bin from propagators.bin and features.bin.
inline void reconstruct(const ExperimentConfig& c) {
  require_stages(c, "reconstruct");
  const ArrayFile p = read_array(dir_of(c) / "propagators.bin");
  const WickFeatures f = load_features(c);
  const TimeGrid g = stored_grid(p);
  Tensor3 rec = is_spde(c.kind) ? reconstruct_field(CoefficientField{f.set, g, to_tensor(p)}, f)
                                : reconstruct_paths(PropagatorTable{f.set, g, to_tensor(p)}, f);
  write_array(dir_of(c) / "reconstruction.bin", rec, {{"T", g.horizon()}, {"n_steps", g.n_steps()}});
}

// Relative L2 of reconstruction.bin against truth.bin over the
// reconstruction's time window; also written to evaluation.json.
inline double evaluate(const ExperimentConfig& c) {
  require_stages(c, "evaluate");
  const Tensor3 rec = to_tensor(read_array(dir_of(c) / "reconstruction.bin"));
  Tensor3 truth = to_tensor(read_array(dir_of(c) / "truth.bin"));
  const std::size_t axis = is_spde(c.kind) ? 1 : 2;
  if (rec.dim(axis) < truth.dim(axis)) {
    Tensor3 cut(rec.dim(0), rec.dim(1), rec.dim(2));
    for (std::size_t i = 0; i < cut.dim(0); ++i) {
      for (std::size_t j = 0; j < cut.dim(1); ++j) {
        for (std::size_t k = 0; k < cut.dim(2); ++k) cut(i, j, k) = truth(i, j, k);
      }
    }
    truth = std::move(cut);
  }
  const double err = relative_l2(rec, truth);
  auto out = open_output(dir_of(c) / "evaluation.json");
  out << nlohmann::ordered_json{{"relative_l2", err}}.dump(2) << '\n';
  return err;
}

}  // namespace wce::stages
