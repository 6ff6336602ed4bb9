#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wce/chaos.hpp"
#include "wce/config.hpp"
#include "wce/enkf.hpp"
#include "wce/error.hpp"
#include "wce/estimator.hpp"
#include "wce/io.hpp"
#include "wce/noise.hpp"
#include "wce/sde_propagator.hpp"
#include "wce/spde_propagator.hpp"
#include "wce/timebasis.hpp"

#ifndef WCE_VERSION
#define WCE_VERSION "0.1.0"
#endif

namespace wce {

inline constexpr const char* kLibraryVersion = WCE_VERSION;

using OrderedJson = nlohmann::ordered_json;

struct StageTime {
  std::string name;
  double seconds = 0.0;
};

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string hash;  // git blob SHA-1
};

struct RunManifest {
  std::string version = kLibraryVersion;
  std::string kind;
  std::uint64_t seed = 0;
  std::string config;  // resolved TOML
  std::string status = "running";
  std::string failed_stage;
  std::string failure;
  std::vector<StageTime> stages;
  std::vector<OutputFile> files;
  OrderedJson metrics = OrderedJson::object();
  std::string sweep_axis;
  std::vector<SweepRow> sweep;

  [[nodiscard]] OrderedJson to_json() const {
    OrderedJson j;
    j["version"] = version;
    j["kind"] = kind;
    j["seed"] = seed;
    j["status"] = status;
    if (!failed_stage.empty()) j["failure"] = {{"stage", failed_stage}, {"message", failure}};
    j["config"] = config;
    j["stages"] = OrderedJson::array();
    for (const auto& s : stages) j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}});
    j["files"] = OrderedJson::array();
    for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"hash", f.hash}});
    j["metrics"] = metrics;
    if (!sweep_axis.empty()) {
      j["sweep"] = {{"axis", sweep_axis}, {"rows", OrderedJson::array()}};
      for (const auto& r : sweep) j["sweep"]["rows"].push_back({{"value", r.value}, {"metric", r.metric}, {"seconds", r.seconds}});
    }
    return j;
  }

  static RunManifest from_json(const OrderedJson& j) {
    RunManifest m;
    try {
      m.version = j.at("version").get<std::string>();
      m.kind = j.at("kind").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.status = j.at("status").get<std::string>();
      if (j.contains("failure")) {
        m.failed_stage = j["failure"].at("stage").get<std::string>();
        m.failure = j["failure"].at("message").get<std::string>();
      }
      m.config = j.at("config").get<std::string>();
      for (const auto& s : j.at("stages")) m.stages.push_back({s.at("name"), s.at("seconds")});
      for (const auto& f : j.at("files")) m.files.push_back({f.at("path"), f.at("hash")});
      m.metrics = j.at("metrics");
      if (j.contains("sweep")) {
        m.sweep_axis = j["sweep"].at("axis").get<std::string>();
        for (const auto& r : j["sweep"].at("rows")) m.sweep.push_back({r.at("value"), r.at("metric"), r.at("seconds")});
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::io, std::string("malformed manifest: ") + e.what());
    }
    return m;
  }
};

inline RunManifest read_manifest(const fs::path& path) {
  try {
    return RunManifest::from_json(OrderedJson::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::io, "cannot parse manifest '" + path.string() + "': " + e.what());
  }
}

namespace detail {

inline std::string metric_text(const OrderedJson& v) {
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_number()) return v.dump();
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

// Fixed-order plain-text summary; depends only on the manifest.
inline std::string emit_report(const RunManifest& m) {
  std::ostringstream o;
  o << "wce run report\n";
  o << "version: " << m.version << '\n';
  o << "kind: " << m.kind << '\n';
  o << "seed: " << m.seed << '\n';
  o << "status: " << m.status << '\n';
  if (!m.failed_stage.empty()) o << "failed stage: " << m.failed_stage << " (" << m.failure << ")\n";
  if (!m.metrics.empty()) {
    std::size_t width = 6;
    for (const auto& [k, v] : m.metrics.items()) width = std::max(width, k.size());
    o << "\nmetrics\n";
    for (const auto& [k, v] : m.metrics.items()) o << "  " << detail::pad(k, width) << "  " << detail::metric_text(v) << '\n';
  }
  if (!m.sweep_axis.empty()) {
    o << "\nsweep over " << m.sweep_axis << "\n  " << detail::pad("value", 12) << "  relative_l2\n";
    std::vector<SweepRow> rows = m.sweep;
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.value < b.value; });
    for (const auto& r : rows) o << "  " << detail::pad(format_double(r.value), 12) << "  " << format_double(r.metric) << '\n';
  }
  std::vector<std::string> csvs;
  for (const auto& f : m.files) {
    if (f.path.size() > 4 && f.path.ends_with(".csv")) csvs.push_back(f.path);
  }
  if (!csvs.empty()) {
    o << "\ncsv outputs\n";
    for (const auto& c : csvs) o << "  " << c << '\n';
  }
  return o.str();
}

// Records stage wall times and tags failures with the stage name.
class StageClock {
 public:
  template <class F>
  decltype(auto) run(const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    auto record = [&] {
      times_.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    };
    try {
      if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
        body();
        record();
      } else {
        decltype(auto) r = body();
        record();
        return r;
      }
    } catch (const Error& e) {
      record();
      failed_ = name;
      const std::string prefix = std::string(to_string(e.kind())) + ": ";
      std::string msg = e.what();
      if (msg.starts_with(prefix)) msg.erase(0, prefix.size());
      throw Error(e.kind(), "stage '" + name + "': " + msg);
    } catch (...) {
      record();
      failed_ = name;
      throw;
    }
  }

  [[nodiscard]] const std::vector<StageTime>& times() const { return times_; }
  [[nodiscard]] const std::string& failed_stage() const { return failed_; }

 private:
  std::vector<StageTime> times_;
  std::string failed_;
};

// ---------------------------------------------------------------------------
// Shared helpers

inline Tensor3 take_paths(const Tensor3& t, std::size_t from, std::size_t count) {
  if (from + count > t.dim(0)) throw Error(ErrorKind::shape, "path range exceeds batch size");
  Tensor3 out(count, t.dim(1), t.dim(2));
  const std::size_t block = t.dim(1) * t.dim(2);
  std::copy(t.data() + from * block, t.data() + (from + count) * block, out.data());
  return out;
}

inline WickFeatures take_rows(const WickFeatures& f, std::size_t from, std::size_t count) {
  if (from + count > f.n_paths()) throw Error(ErrorKind::shape, "path range exceeds feature rows");
  return {f.set, f.values.middleRows(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(count))};
}

// Keeps every `stride`-th entry along `axis` (always including index 0).
inline Tensor3 stride_axis(const Tensor3& t, std::size_t axis, std::size_t stride) {
  if (stride <= 1) return t;
  auto dims = t.dims();
  dims[axis] = (dims[axis] + stride - 1) / stride;
  Tensor3 out(dims[0], dims[1], dims[2]);
  for (std::size_t i = 0; i < dims[0]; ++i) {
    for (std::size_t j = 0; j < dims[1]; ++j) {
      for (std::size_t k = 0; k < dims[2]; ++k) {
        const std::size_t si = axis == 0 ? i * stride : i, sj = axis == 1 ? j * stride : j, sk = axis == 2 ? k * stride : k;
        out(i, j, k) = t(si, sj, sk);
      }
    }
  }
  return out;
}

inline GaussianCoords leading_components(const GaussianCoords& c, std::size_t components) {
  if (components > c.n_components()) throw Error(ErrorKind::shape, "requested more components than simulated");
  GaussianCoords out{Tensor3(c.n_paths(), components, c.n_modes())};
  for (std::size_t i = 0; i < c.n_paths(); ++i) {
    for (std::size_t m = 0; m < components; ++m) {
      for (std::size_t j = 0; j < c.n_modes(); ++j) out.values(i, m, j) = c.values(i, m, j);
    }
  }
  return out;
}

inline AffineSdeModel affine_model(const ExperimentConfig& c) {
  const auto& m = c.model;
  const bool gbm = c.kind == ExperimentKind::gbm || (c.kind == ExperimentKind::sensitivity && c.sweep.model == "gbm");
  return gbm ? AffineSdeModel::geometric_bm(m.x0, m.mu, m.sigma)
             : AffineSdeModel::ornstein_uhlenbeck(m.x0, m.theta, m.mu, m.sigma);
}

inline WickDriftSdeModel wick_drift_model(const ExperimentConfig& c) {
  return {c.model.x0, c.model.coefficients, c.model.sigma};
}

inline HestonModel heston_model(const ExperimentConfig& c) {
  const auto& m = c.model;
  return {m.mu, m.kappa, m.theta_v, m.zeta, m.rho, m.s0, m.v0};
}

inline QSpectrum noise_spectrum(const ExperimentConfig& c) {
  return QSpectrum::power_law(c.noise.family, c.model.n_x, c.noise.n_modes, c.noise.sigma, c.noise.power);
}

inline HeatSpdeModel heat_model(const ExperimentConfig& c) {
  HeatSpdeModel h;
  h.nu = c.model.nu;
  h.n_x = c.model.n_x;
  h.chi0 = sine_initial_condition(c.model.n_x, c.model.chi0_amplitude, c.model.chi0_wavenumber);
  h.spectrum = noise_spectrum(c);
  return h;
}

// Pointwise polynomial sum_p a_p u^p (Horner).
inline PointwiseDrift polynomial_drift(std::vector<double> coeffs) {
  bool zero = std::all_of(coeffs.begin(), coeffs.end(), [](double a) { return a == 0.0; });
  if (zero) return {};
  return [coeffs = std::move(coeffs)](double u) {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * u + *it;
    return acc;
  };
}

// Chaos-side mean and variance at every node: u_0 and sum_{alpha != 0} u_alpha^2.
inline std::pair<std::vector<double>, std::vector<double>> chaos_moments(const PropagatorTable& t, std::size_t comp = 0) {
  const std::size_t zero = *t.set->find(MultiIndex());
  const std::size_t nodes = t.values.dim(2);
  std::vector<double> mean(nodes), var(nodes, 0.0);
  for (std::size_t k = 0; k < nodes; ++k) {
    mean[k] = t.values(zero, comp, k);
    for (std::size_t q = 0; q < t.values.dim(0); ++q) {
      if (q != zero) var[k] += t.values(q, comp, k) * t.values(q, comp, k);
    }
  }
  return {mean, var};
}

inline std::pair<double, double> sample_moments(const Tensor3& paths, std::size_t comp, std::size_t k) {
  const std::size_t np = paths.dim(0);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < np; ++i) s += paths(i, comp, k);
  const double mean = s / static_cast<double>(np);
  for (std::size_t i = 0; i < np; ++i) s2 += (paths(i, comp, k) - mean) * (paths(i, comp, k) - mean);
  return {mean, np > 1 ? s2 / static_cast<double>(np - 1) : 0.0};
}

// ---------------------------------------------------------------------------
// Per-kind computations. Each returns everything the writers and the
// acceptance checks need; none of them touches the filesystem.

struct ScalarSdeResult {
  IndexSetPtr set;
  NoiseBatch noise;
  PropagatorTable table;
  Tensor3 truth;           // Euler-Maruyama on the shared increments (empty for wick_drift)
  Tensor3 reconstruction;
  double relative_l2 = 0.0;
  double moment_chaos = 0.0;  // variance (ou, wick_drift) or second moment (gbm) at T
  double moment_exact = 0.0;
};

inline ScalarSdeResult compute_scalar_sde(const ExperimentConfig& c, StageClock& clock) {
  ScalarSdeResult r;
  const TimeGrid grid = c.time_grid();
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, grid);
  r.set = index_set(1, c.chaos.n_time_modes, c.chaos.max_order);
  const SolverOptions opt{c.chaos.substeps};
  const bool wick = c.kind == ExperimentKind::wick_drift;
  clock.run("simulate", [&] {
    r.noise = simulate_brownian(c.paths.n_paths, 1, grid, c.seed);
    if (!wick) r.truth = simulate_em_sde(affine_model(c), r.noise);
  });
  const WickFeatures features = clock.run("features", [&] { return wick_features(gaussian_coords(r.noise, basis), r.set); });
  clock.run("solve", [&] {
    r.table = wick ? solve_wick_drift_propagators(wick_drift_model(c), basis, r.set, grid, opt)
                   : solve_affine_propagators(affine_model(c), basis, r.set, grid, opt);
  });
  clock.run("reconstruct", [&] { r.reconstruction = reconstruct_paths(r.table, features); });
  clock.run("evaluate", [&] {
    const auto [mean, var] = chaos_moments(r.table);
    const double T = grid.horizon();
    const auto& m = c.model;
    if (c.kind == ExperimentKind::gbm) {
      r.moment_chaos = mean.back() * mean.back() + var.back();
      r.moment_exact = m.x0 * m.x0 * std::exp((2.0 * m.mu + m.sigma * m.sigma) * T);
    } else if (c.kind == ExperimentKind::ou) {
      r.moment_chaos = var.back();
      r.moment_exact = m.sigma * m.sigma * (1.0 - std::exp(-2.0 * m.theta * T)) / (2.0 * m.theta);
    } else {
      r.moment_chaos = var.back();
      r.moment_exact = std::numeric_limits<double>::quiet_NaN();
    }
    if (!wick) r.relative_l2 = relative_l2(r.reconstruction, r.truth);
  });
  return r;
}

struct HeatResult {
  IndexSetPtr set;
  CoefficientField field;
  Tensor3 truth;
  Tensor3 reconstruction;
  double relative_l2 = 0.0;
  double mean_field_max_error = 0.0;  // heat only: u_0 vs eigenmode decay
  double higher_order_max = 0.0;      // max |u_alpha| over |alpha| >= 2
};

inline HeatResult compute_heat(const ExperimentConfig& c, StageClock& clock) {
  HeatResult r;
  const TimeGrid grid = c.time_grid();
  const HeatSpdeModel heat = heat_model(c);
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, grid);
  r.set = index_set(c.noise.n_modes, c.chaos.n_time_modes, c.chaos.max_order);
  const bool semilinear = c.kind == ExperimentKind::semilinear_spde;
  QField q;
  clock.run("simulate", [&] {
    q = simulate_q_brownian(heat.spectrum, grid, c.paths.n_paths, c.seed);
    r.truth = simulate_em_spde(heat, q.field, grid, semilinear ? polynomial_drift(c.model.reaction) : PointwiseDrift{});
  });
  const WickFeatures features = clock.run("features", [&] { return wick_features(gaussian_coords(q.modes, basis), r.set); });
  clock.run("solve", [&] {
    r.field = semilinear ? solve_semilinear_propagators({heat, c.model.reaction}, basis, r.set, grid,
                                                        SplittingOptions{c.chaos.substeps})
                         : solve_heat_propagators(heat, basis, r.set, grid);
  });
  clock.run("reconstruct", [&] { r.reconstruction = reconstruct_field(r.field, features); });
  clock.run("evaluate", [&] {
    r.relative_l2 = relative_l2(r.reconstruction, r.truth);
    const std::size_t zero = *r.set->find(MultiIndex());
    const TorusFourier fourier(heat.n_x);
    const double w = 2.0 * std::numbers::pi * static_cast<double>(c.model.chi0_wavenumber);
    double err = 0.0;
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      const double decay = std::exp(-heat.nu * w * w * grid.time(k));
      for (std::size_t i = 0; i < heat.n_x; ++i) {
        const double exact = heat.chi0[i] * decay;
        err = std::max(err, std::abs(r.field.values(zero, k, i) - exact));
      }
    }
    r.mean_field_max_error = semilinear ? std::numeric_limits<double>::quiet_NaN() : err;
    double hi = 0.0;
    for (std::size_t q2 = 0; q2 < r.set->size(); ++q2) {
      if ((*r.set)[q2].degree() < 2) continue;
      for (double v : r.field.values.slice(q2)) hi = std::max(hi, std::abs(v));
    }
    r.higher_order_max = hi;
  });
  return r;
}

struct Phi41Cell {
  unsigned max_order;
  std::size_t n_train;
  double relative_l2;
};

struct Phi41Result {
  std::vector<Phi41Cell> study;  // K = 1..max_order x N in {n_train/2, n_train}
  double relative_l2 = 0.0;      // at (max_order, n_train)
  Tensor3 test_truth;
  Tensor3 test_reconstruction;
};

inline Phi41Result compute_phi41(const ExperimentConfig& c, StageClock& clock) {
  Phi41Result r;
  const TimeGrid grid = c.time_grid();
  const HeatSpdeModel heat = heat_model(c);
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, grid);
  const std::size_t n_train = c.paths.n_train, n_test = c.paths.n_test;
  if (n_train < 2 || n_test == 0) throw Error(ErrorKind::config, "phi41 needs paths.n_train >= 2 and paths.n_test >= 1");
  QField q;
  Tensor3 truth;
  clock.run("simulate", [&] {
    q = simulate_q_brownian(heat.spectrum, grid, n_train + n_test, c.seed);
    truth = simulate_em_spde(heat, q.field, grid, polynomial_drift(c.model.reaction));
  });
  const GaussianCoords coords =
      clock.run("features", [&] { return leading_components(gaussian_coords(q.modes, basis), c.estimation.kl_modes); });
  r.test_truth = take_paths(truth, n_train, n_test);
  const FitConfig fit = c.fit_config();
  for (unsigned K = 1; K <= c.chaos.max_order; ++K) {
    const auto set = index_set(c.estimation.kl_modes, c.chaos.n_time_modes, K);
    const WickFeatures features = clock.run("features", [&] { return wick_features(coords, set); });
    const WickFeatures test = take_rows(features, n_train, n_test);
    for (std::size_t N : {n_train / 2, n_train}) {
      const CoefficientField field =
          clock.run("fit", [&] { return fit_coefficient_field(take_paths(truth, 0, N), take_rows(features, 0, N), grid, fit); });
      Tensor3 rec = clock.run("reconstruct", [&] { return reconstruct_field(field, test); });
      const std::size_t nodes = field.grid.n_nodes();
      Tensor3 window_truth = r.test_truth;
      if (nodes != grid.n_nodes()) {
        window_truth = Tensor3(n_test, nodes, heat.n_x);
        for (std::size_t i = 0; i < n_test; ++i) {
          std::copy_n(&r.test_truth(i, 0, 0), nodes * heat.n_x, &window_truth(i, 0, 0));
        }
      }
      const double err = clock.run("evaluate", [&] { return relative_l2(rec, window_truth); });
      r.study.push_back({K, N, err});
      if (K == c.chaos.max_order && N == n_train) {
        r.relative_l2 = err;
        r.test_reconstruction = std::move(rec);
      }
    }
  }
  return r;
}

struct HestonWindowRow {
  std::size_t window;
  double train_relative_l2;  // mean over seeds
  double heldout_rmse;       // mean over seeds
};

struct HestonResult {
  std::vector<HestonWindowRow> windows;
  std::vector<std::vector<std::pair<double, double>>> per_seed;  // [seed][window] = (train rel L2, held-out RMSE)
  bool rmse_non_increasing = true;
  double max_train_relative_l2 = 0.0;
};

// For each seed: correlated Heston paths, crossed Wick features of (W^S, W^V),
// ridge fit on the first `window` steps, dictionary extrapolation over the
// remaining steps of the same paths.
inline HestonResult compute_heston(const ExperimentConfig& c, StageClock& clock) {
  HestonResult r;
  const TimeGrid grid = c.time_grid();
  const HestonModel model = heston_model(c);
  model.validate();
  const BasisSet basis(c.chaos.basis, c.chaos.n_time_modes, grid);
  const std::size_t np = c.paths.n_paths, n = grid.n_steps();
  const auto set = index_set(1, c.chaos.n_time_modes, c.chaos.max_order);
  const TimeDictionary dict = TimeDictionary::polynomial(c.heston.dictionary_degree);
  std::vector<double> train_sum(c.heston.windows.size(), 0.0), rmse_sum(c.heston.windows.size(), 0.0);
  for (std::size_t s = 0; s < c.heston.n_seeds; ++s) {
    const std::uint64_t base = c.seed + 100 * s;
    NoiseBatch ws, wv;
    Tensor3 paths;
    clock.run("simulate", [&] {
      ws = simulate_brownian(np, 1, grid, base + 1);
      wv = correlate_brownian(ws, simulate_brownian(np, 1, grid, base + 2), model.rho);
      Tensor3 inc(np, 2, n);
      for (std::size_t i = 0; i < np; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          inc(i, 0, k) = ws.increments(i, 0, k);
          inc(i, 1, k) = wv.increments(i, 0, k);
        }
      }
      paths = simulate_em_sde(model, NoiseBatch::from_increments(grid, base, std::move(inc)));
    });
    const WickFeatures features = clock.run("features", [&] {
      return crossed_features(wick_features(gaussian_coords(ws, basis), set), wick_features(gaussian_coords(wv, basis), set),
                              CrossPairRule{c.chaos.max_order});
    });
    std::vector<std::pair<double, double>> row;
    for (std::size_t w = 0; w < c.heston.windows.size(); ++w) {
      const std::size_t steps = c.heston.windows[w];
      FitConfig fit = c.fit_config();
      fit.window_fraction = static_cast<double>(steps) / static_cast<double>(n);
      const PropagatorTable table = clock.run("fit", [&] { return fit_propagators(paths, features, grid, fit); });
      if (table.grid.n_steps() != steps) throw Error(ErrorKind::shape, "training window resolved to the wrong length");
      const double train = clock.run("evaluate", [&] {
        Tensor3 window_paths(np, 2, steps + 1);
        for (std::size_t i = 0; i < np; ++i) {
          for (std::size_t d = 0; d < 2; ++d) std::copy_n(&paths(i, d, 0), steps + 1, &window_paths(i, d, 0));
        }
        return relative_l2(reconstruct_paths(table, features), window_paths);
      });
      const double rmse = clock.run("extrapolate", [&] {
        const Tensor3 rec = reconstruct_paths(extrapolate_propagators(table, dict, grid), features);
        double se = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < np; ++i) {
          for (std::size_t d = 0; d < 2; ++d) {
            for (std::size_t k = steps + 1; k <= n; ++k) {
              const double e = rec(i, d, k) - paths(i, d, k);
              se += e * e;
              ++count;
            }
          }
        }
        return std::sqrt(se / static_cast<double>(count));
      });
      train_sum[w] += train;
      rmse_sum[w] += rmse;
      row.emplace_back(train, rmse);
    }
    r.per_seed.push_back(std::move(row));
  }
  const double ns = static_cast<double>(c.heston.n_seeds);
  for (std::size_t w = 0; w < c.heston.windows.size(); ++w) {
    r.windows.push_back({c.heston.windows[w], train_sum[w] / ns, rmse_sum[w] / ns});
    r.max_train_relative_l2 = std::max(r.max_train_relative_l2, train_sum[w] / ns);
    if (w > 0 && r.windows[w].heldout_rmse > r.windows[w - 1].heldout_rmse) r.rmse_non_increasing = false;
  }
  return r;
}

inline EnkfConfig enkf_config(const ExperimentConfig& c, std::uint64_t seed) {
  EnkfConfig e;
  e.ensemble_size = c.enkf.ensemble_size;
  e.priors = {{{c.enkf.prior_theta[0], c.enkf.prior_theta[1]},
               {c.enkf.prior_mu[0], c.enkf.prior_mu[1]},
               {c.enkf.prior_sigma[0], c.enkf.prior_sigma[1]}}};
  e.r = c.enkf.r;
  e.n_steps = c.enkf.n_steps;
  e.dt = c.enkf.dt;
  e.seed = seed;
  e.tail = c.enkf.tail;
  e.forecast_noise = c.enkf.forecast_noise;
  return e;
}

struct EnkfExperimentResult {
  std::vector<EnkfResult> runs;
  Eigen::Vector3d median = Eigen::Vector3d::Zero();
  bool cov_trace_monotone = true;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorKind::empty_data, "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Seed s filters observations simulated with seed + 1000 from an ensemble
// drawn with seed, for seed = config seed + s.
inline EnkfExperimentResult compute_enkf(const ExperimentConfig& c, StageClock& clock) {
  EnkfExperimentResult r;
  const auto& m = c.model;
  for (std::size_t s = 0; s < c.enkf.n_seeds; ++s) {
    const std::uint64_t seed = c.seed + s;
    const auto obs = clock.run("simulate", [&] {
      return simulate_ou_observations(m.theta, m.mu, m.sigma, m.x0, c.enkf.dt, c.enkf.n_steps, seed + 1000);
    });
    const auto dw = observation_increments(c.enkf.dt, c.enkf.n_steps, seed + 1000);
    r.runs.push_back(clock.run("filter", [&] { return run_enkf(obs, enkf_config(c, seed), dw); }));
    r.cov_trace_monotone = r.cov_trace_monotone && r.runs.back().cov_trace_monotone;
  }
  for (int p = 0; p < 3; ++p) {
    std::vector<double> v;
    for (const auto& run : r.runs) v.push_back(run.estimate(p));
    r.median(p) = median(v);
  }
  return r;
}

inline SweepSpec sweep_spec(const ExperimentConfig& c) {
  SweepSpec s;
  s.model = affine_model(c);
  s.grid = c.time_grid();
  s.basis = c.chaos.basis;
  s.n_time_modes = c.chaos.n_time_modes;
  s.max_order = c.chaos.max_order;
  s.n_paths = c.paths.n_train;
  s.n_test_paths = c.paths.n_test;
  s.seed = c.seed;
  s.source = c.sweep.source;
  s.fit = c.fit_config();
  s.solver = SolverOptions{c.chaos.substeps};
  return s;
}

// ---------------------------------------------------------------------------
// Artifact writing

class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  [[nodiscard]] const fs::path& root() const { return root_; }

  template <class Writer>
  void text(const std::string& name, Writer&& write) {
    {
      auto out = open_output(root_ / name);
      write(out);
      if (!out) throw Error(ErrorKind::io, "failed writing '" + (root_ / name).string() + "'");
    }
    record(name);
  }

  void array(const std::string& name, const Tensor3& t, const nlohmann::json& meta = nlohmann::json::object()) {
    write_array(root_ / name, t, meta);
    record(name);
    record(name + ".json");
  }

  void array(const std::string& name, const Matrix& m, const nlohmann::json& meta = nlohmann::json::object()) {
    write_array(root_ / name, m, meta);
    record(name);
    record(name + ".json");
  }

  [[nodiscard]] const std::vector<OutputFile>& files() const { return files_; }

 private:
  void record(const std::string& name) {
    const std::string hash = file_hash(root_ / name);
    for (auto& f : files_) {
      if (f.path == name) {
        f.hash = hash;
        return;
      }
    }
    files_.push_back({name, hash});
  }

  fs::path root_;
  std::vector<OutputFile> files_;
};

namespace detail {

inline void write_table_csv(std::ostream& out, const PropagatorTable& t, std::size_t stride) {
  CsvWriter csv(out, {"alpha_id", "state_component", "t", "value"});
  for (std::size_t q = 0; q < t.values.dim(0); ++q) {
    for (std::size_t c = 0; c < t.values.dim(1); ++c) {
      for (std::size_t k = 0; k < t.values.dim(2); k += stride) {
        csv << q << c << t.grid.time(k) << t.values(q, c, k);
        csv.end_row();
      }
    }
  }
}

inline void write_index_set(std::ostream& out, const ChaosIndexSet& set) { out << set.to_json().dump(1) << '\n'; }

inline nlohmann::json time_meta(const TimeGrid& g, std::size_t stride, const char* layout) {
  return {{"T", g.horizon()}, {"n_steps", g.n_steps()}, {"time_stride", stride}, {"layout", layout}};
}

}  // namespace detail

inline void write_scalar_sde(OutputDir& out, const ExperimentConfig& c, const ScalarSdeResult& r, OrderedJson& metrics) {
  const std::size_t stride = c.output.time_stride;
  const TimeGrid& g = r.table.grid;
  out.text("index_set.json", [&](std::ostream& o) { detail::write_index_set(o, *r.set); });
  out.text("propagators.csv", [&](std::ostream& o) { detail::write_table_csv(o, r.table, stride); });
  const auto [mean, var] = chaos_moments(r.table);
  const bool has_truth = !r.truth.empty();
  out.text("moments.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"t", "mean_chaos", "variance_chaos"};
    if (has_truth) header.insert(header.end(), {"mean_em", "variance_em"});
    CsvWriter csv(o, header);
    for (std::size_t k = 0; k < g.n_nodes(); k += stride) {
      csv << g.time(k) << mean[k] << var[k];
      if (has_truth) {
        const auto [m, v] = sample_moments(r.truth, 0, k);
        csv << m << v;
      }
      csv.end_row();
    }
  });
  if (c.output.save_arrays) {
    out.array("propagators.bin", stride_axis(r.table.values, 2, stride), detail::time_meta(g, stride, "alpha,component,time"));
    out.array("reconstruction.bin", stride_axis(r.reconstruction, 2, stride), detail::time_meta(g, stride, "path,component,time"));
    if (has_truth) out.array("truth.bin", stride_axis(r.truth, 2, stride), detail::time_meta(g, stride, "path,component,time"));
  }
  metrics["index_set_size"] = r.set->size();
  if (has_truth) metrics["relative_l2"] = r.relative_l2;
  if (c.kind == ExperimentKind::gbm) {
    metrics["second_moment_chaos"] = r.moment_chaos;
    metrics["second_moment_exact"] = r.moment_exact;
    metrics["second_moment_rel_gap"] = std::abs(r.moment_chaos - r.moment_exact) / r.moment_exact;
  } else if (c.kind == ExperimentKind::ou) {
    metrics["variance_chaos"] = r.moment_chaos;
    metrics["variance_exact"] = r.moment_exact;
    metrics["variance_rel_gap"] = std::abs(r.moment_chaos - r.moment_exact) / r.moment_exact;
  } else {
    metrics["mean_T"] = mean.back();
    metrics["variance_T"] = var.back();
  }
}

inline void write_heat(OutputDir& out, const ExperimentConfig& c, const HeatResult& r, OrderedJson& metrics) {
  const std::size_t stride = c.output.time_stride;
  const TimeGrid& g = r.field.grid;
  const std::size_t zero = *r.set->find(MultiIndex());
  out.text("index_set.json", [&](std::ostream& o) { detail::write_index_set(o, *r.set); });
  out.text("mean_field.csv", [&](std::ostream& o) {
    CsvWriter csv(o, {"t", "x", "u0"});
    for (std::size_t k = 0; k < g.n_nodes(); k += stride) {
      for (std::size_t i = 0; i < r.field.n_x(); ++i) {
        csv << g.time(k) << static_cast<double>(i) / static_cast<double>(r.field.n_x()) << r.field.values(zero, k, i);
        csv.end_row();
      }
    }
  });
  if (c.output.save_arrays) {
    out.array("coefficients.bin", stride_axis(r.field.values, 1, stride), detail::time_meta(g, stride, "alpha,time,x"));
    out.array("reconstruction.bin", stride_axis(r.reconstruction, 1, stride), detail::time_meta(g, stride, "path,time,x"));
    out.array("truth.bin", stride_axis(r.truth, 1, stride), detail::time_meta(g, stride, "path,time,x"));
  }
  metrics["index_set_size"] = r.set->size();
  metrics["relative_l2"] = r.relative_l2;
  if (c.kind == ExperimentKind::heat_spde) metrics["mean_field_max_error"] = r.mean_field_max_error;
  metrics["higher_order_max_abs"] = r.higher_order_max;
}

inline void write_phi41(OutputDir& out, const ExperimentConfig& c, const Phi41Result& r, OrderedJson& metrics) {
  out.text("study.csv", [&](std::ostream& o) {
    CsvWriter csv(o, {"max_order", "n_train", "relative_l2"});
    for (const auto& cell : r.study) {
      csv << static_cast<std::size_t>(cell.max_order) << cell.n_train << cell.relative_l2;
      csv.end_row();
    }
  });
  if (c.output.save_arrays) {
    const std::size_t stride = c.output.time_stride;
    const TimeGrid g = c.time_grid();
    out.array("test_truth.bin", stride_axis(r.test_truth, 1, stride), detail::time_meta(g, stride, "path,time,x"));
    out.array("test_reconstruction.bin", stride_axis(r.test_reconstruction, 1, stride),
              detail::time_meta(g, stride, "path,time,x"));
  }
  metrics["relative_l2"] = r.relative_l2;
  for (const auto& cell : r.study) {
    metrics["relative_l2[K=" + std::to_string(cell.max_order) + ",N=" + std::to_string(cell.n_train) + "]"] = cell.relative_l2;
  }
}

inline void write_heston(OutputDir& out, const ExperimentConfig& c, const HestonResult& r, OrderedJson& metrics) {
  out.text("windows.csv", [&](std::ostream& o) {
    CsvWriter csv(o, {"window_steps", "train_relative_l2", "heldout_rmse"});
    for (const auto& w : r.windows) {
      csv << w.window << w.train_relative_l2 << w.heldout_rmse;
      csv.end_row();
    }
  });
  out.text("seeds.csv", [&](std::ostream& o) {
    CsvWriter csv(o, {"seed_index", "window_steps", "train_relative_l2", "heldout_rmse"});
    for (std::size_t s = 0; s < r.per_seed.size(); ++s) {
      for (std::size_t w = 0; w < r.per_seed[s].size(); ++w) {
        csv << s << c.heston.windows[w] << r.per_seed[s][w].first << r.per_seed[s][w].second;
        csv.end_row();
      }
    }
  });
  metrics["max_train_relative_l2"] = r.max_train_relative_l2;
  for (const auto& w : r.windows) metrics["heldout_rmse[window=" + std::to_string(w.window) + "]"] = w.heldout_rmse;
  metrics["heldout_rmse_non_increasing"] = r.rmse_non_increasing;
}

inline void write_enkf(OutputDir& out, const ExperimentConfig& c, const EnkfExperimentResult& r, OrderedJson& metrics) {
  for (std::size_t s = 0; s < r.runs.size(); ++s) {
    out.text("enkf_seed" + std::to_string(s) + ".csv", [&](std::ostream& o) { write_enkf_csv(o, r.runs[s]); });
  }
  out.text("estimates.csv", [&](std::ostream& o) {
    CsvWriter csv(o, {"seed", "theta", "mu", "sigma", "cov_trace_monotone"});
    for (std::size_t s = 0; s < r.runs.size(); ++s) {
      const auto& e = r.runs[s].estimate;
      csv << std::to_string(c.seed + s) << e(0) << e(1) << e(2) << (r.runs[s].cov_trace_monotone ? "true" : "false");
      csv.end_row();
    }
  });
  metrics["theta"] = r.median(0);
  metrics["mu"] = r.median(1);
  metrics["sigma"] = r.median(2);
  metrics["cov_trace_monotone"] = r.cov_trace_monotone;
  metrics["n_seeds"] = r.runs.size();
}

// ---------------------------------------------------------------------------
// Orchestration

inline void write_manifest(const fs::path& dir, RunManifest& m) {
  auto out = open_output(dir / "manifest.json");
  out << m.to_json().dump(2) << '\n';
  auto rep = open_output(dir / "report.txt");
  rep << emit_report(m);
}

// Runs every stage for the config's kind inside `config.output_dir`. On a
// stage failure the manifest is still written (status "failed", stage name,
// message) and the error is rethrown.
inline RunManifest run_experiment(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  validate_config(c);
  const fs::path dir = c.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create output directory '" + dir.string() + "': " + ec.message());

  RunManifest m;
  m.kind = std::string(to_string(c.kind));
  m.seed = c.seed;
  m.config = emit_config(c);
  OutputDir out(dir);
  StageClock clock;
  try {
    out.text("config.toml", [&](std::ostream& o) { o << m.config; });
    switch (c.kind) {
      case ExperimentKind::ou:
      case ExperimentKind::gbm:
      case ExperimentKind::wick_drift: {
        const auto r = compute_scalar_sde(c, clock);
        clock.run("write", [&] { write_scalar_sde(out, c, r, m.metrics); });
        break;
      }
      case ExperimentKind::heat_spde:
      case ExperimentKind::semilinear_spde: {
        const auto r = compute_heat(c, clock);
        clock.run("write", [&] { write_heat(out, c, r, m.metrics); });
        break;
      }
      case ExperimentKind::phi41_estimation: {
        const auto r = compute_phi41(c, clock);
        clock.run("write", [&] { write_phi41(out, c, r, m.metrics); });
        break;
      }
      case ExperimentKind::heston_extrapolation: {
        const auto r = compute_heston(c, clock);
        clock.run("write", [&] { write_heston(out, c, r, m.metrics); });
        break;
      }
      case ExperimentKind::enkf: {
        const auto r = compute_enkf(c, clock);
        clock.run("write", [&] { write_enkf(out, c, r, m.metrics); });
        break;
      }
      case ExperimentKind::sensitivity: {
        m.sweep_axis = std::string(to_string(c.sweep.axis));
        m.sweep = clock.run("sweep", [&] { return sensitivity_sweep(sweep_spec(c), c.sweep.axis, c.sweep.values); });
        clock.run("write", [&] {
          out.text("sweep.csv", [&](std::ostream& o) {
            CsvWriter csv(o, {m.sweep_axis, "relative_l2"});
            for (const auto& row : m.sweep) {
              csv << row.value << row.metric;
              csv.end_row();
            }
          });
        });
        for (const auto& row : m.sweep) m.metrics["relative_l2[" + m.sweep_axis + "=" + format_double(row.value) + "]"] = row.metric;
        break;
      }
    }
    m.status = "ok";
  } catch (const std::exception& e) {
    m.status = "failed";
    m.failed_stage = clock.failed_stage().empty() ? "setup" : clock.failed_stage();
    m.failure = e.what();
    m.stages = clock.times();
    m.files = out.files();
    write_manifest(dir, m);
    throw;
  }
  m.stages = clock.times();
  m.files = out.files();
  write_manifest(dir, m);
  return m;
}

}  // namespace wce
