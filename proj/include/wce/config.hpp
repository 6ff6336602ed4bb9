#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <toml.hpp>

#include "wce/chaos.hpp"
#include "wce/enkf.hpp"
#include "wce/error.hpp"
#include "wce/estimator.hpp"
#include "wce/io.hpp"
#include "wce/noise.hpp"
#include "wce/timebasis.hpp"

namespace wce {

enum class ExperimentKind {
  ou,
  gbm,
  wick_drift,
  heat_spde,
  semilinear_spde,
  phi41_estimation,
  heston_extrapolation,
  enkf,
  sensitivity,
};

inline constexpr std::string_view kExperimentKindNames[] = {
    "ou", "gbm", "wick_drift", "heat_spde", "semilinear_spde", "phi41_estimation", "heston_extrapolation", "enkf",
    "sensitivity"};

inline std::string_view to_string(ExperimentKind k) { return kExperimentKindNames[static_cast<int>(k)]; }

inline ExperimentKind parse_experiment_kind(std::string_view s) {
  for (int k = 0; k < 9; ++k) {
    if (kExperimentKindNames[k] == s) return static_cast<ExperimentKind>(k);
  }
  throw Error(ErrorKind::config, "unknown experiment kind '" + std::string(s) + "'");
}

inline bool is_spde(ExperimentKind k) {
  return k == ExperimentKind::heat_spde || k == ExperimentKind::semilinear_spde ||
         k == ExperimentKind::phi41_estimation;
}

// Every field is materialized; kind-specific defaults are applied before the
// file is read, so an emitted config re-parses to the same value.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ou;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  struct Grid {
    double horizon = 1.0;
    double dt = 1e-3;           // requested maximum step
    std::size_t n_steps = 0;    // resolved
    bool operator==(const Grid&) const = default;
  } grid;

  struct Chaos {
    BasisKind basis = BasisKind::haar;
    std::size_t n_time_modes = 64;
    unsigned max_order = 1;
    std::size_t substeps = 4;
    bool operator==(const Chaos&) const = default;
  } chaos;

  struct Model {
    double x0 = 1.0;
    double theta = 2.0;
    double mu = 0.0;
    double sigma = 0.5;
    std::vector<double> coefficients{0.0, -1.0};  // wick drift a_p
    // SPDE
    double nu = 1.0;
    std::size_t n_x = 64;
    double chi0_amplitude = 1.0;
    std::size_t chi0_wavenumber = 1;
    std::vector<double> reaction{0.0, 0.0};
    // Heston
    double kappa = 2.0;
    double theta_v = 0.04;
    double zeta = 0.3;
    double rho = -0.7;
    double s0 = 1.0;
    double v0 = 0.04;
    bool operator==(const Model&) const = default;
  } model;

  struct Noise {
    SpatialFamily family = SpatialFamily::torus_fourier;
    std::size_t n_modes = 8;
    double sigma = 0.1;
    double power = 2.0;
    bool operator==(const Noise&) const = default;
  } noise;

  struct Paths {
    std::size_t n_paths = 200;
    std::size_t n_train = 800;
    std::size_t n_test = 200;
    bool operator==(const Paths&) const = default;
  } paths;

  struct Estimation {
    EstimatorKind estimator = EstimatorKind::ridge;
    double lambda = -1.0;  // < 0 selects the scale-aware default
    std::size_t compression_modes = 0;
    double window_fraction = 1.0;
    std::size_t kl_modes = 5;  // KL modes whose coordinates enter the features
    bool operator==(const Estimation&) const = default;
  } estimation;

  struct Heston {
    std::vector<std::size_t> windows{50, 60, 70, 80};
    std::size_t n_seeds = 5;
    unsigned dictionary_degree = 2;
    bool operator==(const Heston&) const = default;
  } heston;

  struct Enkf {
    std::size_t ensemble_size = 250;
    double r = 1e-3;
    std::size_t n_steps = 300;
    double dt = 0.01;
    std::size_t tail = 5;
    ForecastNoise forecast_noise = ForecastNoise::independent;
    std::size_t n_seeds = 5;
    std::vector<double> prior_theta{0.0, 5.0};
    std::vector<double> prior_mu{-3.0, 3.0};
    std::vector<double> prior_sigma{0.0, 0.5};
    bool operator==(const Enkf&) const = default;
  } enkf;

  struct Sweep {
    std::string model = "ou";
    SweepAxis axis = SweepAxis::n_time_modes;
    std::vector<double> values{8, 16, 32, 64};
    PropagatorSource source = PropagatorSource::solve;
    bool operator==(const Sweep&) const = default;
  } sweep;

  struct Output {
    bool save_arrays = true;
    std::size_t time_stride = 1;
    bool operator==(const Output&) const = default;
  } output;

  bool operator==(const ExperimentConfig&) const = default;

  [[nodiscard]] TimeGrid time_grid() const { return {grid.horizon, grid.n_steps}; }
  [[nodiscard]] FitConfig fit_config() const {
    FitConfig f;
    f.kind = estimation.estimator;
    if (estimation.lambda >= 0.0) f.lambda = estimation.lambda;
    f.compression_modes = estimation.compression_modes;
    f.window_fraction = estimation.window_fraction;
    return f;
  }
};

// Defaults that differ by experiment kind.
inline ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.output_dir = "out/" + std::string(to_string(kind));
  switch (kind) {
    case ExperimentKind::ou:
      break;
    case ExperimentKind::gbm:
      c.model.mu = 0.05;
      c.model.sigma = 0.2;
      c.chaos.n_time_modes = 16;
      c.chaos.max_order = 4;
      break;
    case ExperimentKind::wick_drift:
      c.model.coefficients = {0.5, -1.0, -0.2};
      c.model.sigma = 0.3;
      c.model.x0 = 0.0;
      c.chaos.n_time_modes = 16;
      c.chaos.max_order = 2;
      break;
    case ExperimentKind::heat_spde:
    case ExperimentKind::semilinear_spde:
      c.model.nu = 0.1;
      c.chaos.n_time_modes = 32;
      c.paths.n_paths = 50;
      c.output.time_stride = 16;
      if (kind == ExperimentKind::semilinear_spde) {
        c.model.reaction = {0.0, 1.0, 0.0, -0.5};
        c.chaos.max_order = 3;
        c.chaos.n_time_modes = 2;
        c.noise.n_modes = 3;
      }
      break;
    case ExperimentKind::phi41_estimation:
      c.grid.horizon = 0.05;
      c.chaos.basis = BasisKind::trig;
      c.chaos.n_time_modes = 4;
      c.chaos.max_order = 2;
      c.noise.n_modes = 64;
      c.noise.power = 0.0;
      c.model.reaction = {0.0, 3.0, 0.0, -1.0};
      break;
    case ExperimentKind::heston_extrapolation:
      c.grid.dt = 0.01;
      c.chaos.basis = BasisKind::trig;
      c.chaos.n_time_modes = 4;
      c.chaos.max_order = 2;
      c.model.mu = 0.05;
      c.paths.n_paths = 500;
      c.estimation.window_fraction = 0.75;
      break;
    case ExperimentKind::enkf:
      c.model.theta = 4.0;
      c.model.mu = 1.0;
      c.model.sigma = 0.05;
      c.model.x0 = 0.0;
      break;
    case ExperimentKind::sensitivity:
      c.grid.dt = 1e-3;
      c.paths.n_paths = 200;
      break;
  }
  return c;
}

namespace detail {

// Tracks which keys of a TOML table were consumed so leftovers can be
// reported by name.
class ConfigSection {
 public:
  ConfigSection(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  [[nodiscard]] const toml::node* take(std::string_view key) {
    if (!table_) return nullptr;
    used_.insert(std::string(key));
    return table_->get(key);
  }

  template <class T>
  void read(std::string_view key, T& out) {
    const toml::node* n = take(key);
    if (!n) return;
    out = convert<T>(*n, key);
  }

  template <class T>
  void read_list(std::string_view key, std::vector<T>& out) {
    const toml::node* n = take(key);
    if (!n) return;
    const toml::array* arr = n->as_array();
    if (!arr) throw Error(ErrorKind::config, "key '" + name(key) + "' must be an array");
    std::vector<T> v;
    for (const auto& item : *arr) v.push_back(convert<T>(item, key));
    out = std::move(v);
  }

  void reject_unknown() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        throw Error(ErrorKind::config, "unknown key '" + name(k.str()) + "'");
      }
    }
  }

  [[nodiscard]] std::string name(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

 private:
  template <class T>
  T convert(const toml::node& n, std::string_view key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n.value_exact<bool>()) return *v;
      throw Error(ErrorKind::config, "key '" + name(key) + "' must be a boolean");
    } else if constexpr (std::is_same_v<T, double>) {
      if (auto v = n.value_exact<double>()) return *v;
      if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
      throw Error(ErrorKind::config, "key '" + name(key) + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n.value_exact<std::string>()) return *v;
      throw Error(ErrorKind::config, "key '" + name(key) + "' must be a string");
    } else {
      static_assert(std::is_integral_v<T>);
      if (auto v = n.value_exact<std::int64_t>(); v && *v >= 0) return static_cast<T>(*v);
      throw Error(ErrorKind::config, "key '" + name(key) + "' must be a non-negative integer");
    }
  }

  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> used_;
};

inline std::string toml_double(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string toml_string(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

template <class T>
std::string toml_list(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t q = 0; q < v.size(); ++q) {
    if (q) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += toml_double(v[q]);
    } else {
      out += std::to_string(v[q]);
    }
  }
  return out + "]";
}

}  // namespace detail

// Resolves the grid and checks every guardrail; throws before any large
// allocation happens.
inline void validate_config(ExperimentConfig& c) {
  const auto& g = c.grid;
  if (!(g.horizon > 0.0) || !std::isfinite(g.horizon)) throw Error(ErrorKind::config, "grid.T must be positive");
  if (!(g.dt > 0.0) || g.dt > g.horizon) throw Error(ErrorKind::config, "grid.dt must lie in (0, T]");
  const bool needs_basis_grid = c.kind != ExperimentKind::enkf;
  // Smallest step count with T / n <= dt, rounded up to a multiple of J for
  // haar so that the dyadic breakpoints fall on nodes.
  std::size_t steps = static_cast<std::size_t>(std::ceil(g.horizon / g.dt - 1e-9));
  const bool haar = c.chaos.basis == BasisKind::haar;
  std::vector<std::size_t> modes{c.chaos.n_time_modes};
  if (c.kind == ExperimentKind::sensitivity && c.sweep.axis == SweepAxis::n_time_modes) {
    for (double v : c.sweep.values) modes.push_back(static_cast<std::size_t>(v));
  }
  if (needs_basis_grid && haar) {
    std::size_t align = 1;
    for (auto m : modes) {
      if (m == 0 || !std::has_single_bit(m)) {
        throw Error(ErrorKind::config, "haar basis size J=" + std::to_string(m) + " must be a power of two");
      }
      align = std::max(align, m);
    }
    steps = (steps + align - 1) / align * align;
  }
  if (g.n_steps != 0 && g.n_steps != steps) {
    throw Error(ErrorKind::config, "grid.n_steps=" + std::to_string(g.n_steps) + " is inconsistent with T=" +
                                       format_double(g.horizon) + ", dt=" + format_double(g.dt) + " (resolves to " +
                                       std::to_string(steps) + ")");
  }
  c.grid.n_steps = steps;
  if (c.chaos.n_time_modes == 0) throw Error(ErrorKind::config, "chaos.n_time_modes must be >= 1");
  if (c.chaos.substeps == 0) throw Error(ErrorKind::config, "chaos.substeps must be >= 1");

  // Cardinality guardrail before anything is allocated.
  std::size_t components = 1;
  if (c.kind == ExperimentKind::heat_spde || c.kind == ExperimentKind::semilinear_spde) components = c.noise.n_modes;
  if (c.kind == ExperimentKind::phi41_estimation) components = c.estimation.kl_modes;
  if (c.kind != ExperimentKind::enkf) {
    if (c.kind == ExperimentKind::sensitivity) {
      for (double v : c.sweep.values) {
        std::size_t J = c.chaos.n_time_modes;
        unsigned K = c.chaos.max_order;
        if (c.sweep.axis == SweepAxis::n_time_modes) J = static_cast<std::size_t>(v);
        if (c.sweep.axis == SweepAxis::max_order) K = static_cast<unsigned>(v);
        ChaosIndexSet::check_bounds(1, J, K);
      }
    } else {
      ChaosIndexSet::check_bounds(components, c.chaos.n_time_modes, c.chaos.max_order);
    }
  }

  if (is_spde(c.kind)) {
    if (c.model.n_x < 2 || !std::has_single_bit(c.model.n_x)) {
      throw Error(ErrorKind::config, "model.n_x must be a power of two");
    }
    const std::size_t max_modes = c.noise.family == SpatialFamily::torus_fourier ? c.model.n_x : c.model.n_x - 1;
    if (c.noise.n_modes == 0 || c.noise.n_modes > max_modes) {
      throw Error(ErrorKind::config, "noise.n_modes must lie in [1, " + std::to_string(max_modes) + "]");
    }
    if (c.noise.family != SpatialFamily::torus_fourier) {
      throw Error(ErrorKind::config, "noise.family must be torus_fourier for the periodic heat operator");
    }
    if (!(c.model.nu > 0.0)) throw Error(ErrorKind::config, "model.nu must be positive");
  }
  if (c.kind == ExperimentKind::phi41_estimation && c.estimation.kl_modes > c.noise.n_modes) {
    throw Error(ErrorKind::config, "estimation.kl_modes exceeds noise.n_modes");
  }
  if (c.kind == ExperimentKind::semilinear_spde && c.model.reaction.size() > c.chaos.max_order + 1) {
    throw Error(ErrorKind::config, "model.reaction degree exceeds chaos.max_order");
  }
  if (c.kind == ExperimentKind::wick_drift && c.model.coefficients.size() > c.chaos.max_order + 1) {
    throw Error(ErrorKind::config, "model.coefficients degree exceeds chaos.max_order");
  }
  if (c.estimation.window_fraction <= 0.0 || c.estimation.window_fraction > 1.0) {
    throw Error(ErrorKind::config, "estimation.window_fraction must lie in (0, 1]");
  }
  if (c.kind == ExperimentKind::heston_extrapolation) {
    if (!(c.model.rho >= -1.0 && c.model.rho <= 1.0)) throw Error(ErrorKind::config, "model.rho outside [-1, 1]");
    for (auto w : c.heston.windows) {
      if (w == 0 || w >= c.grid.n_steps) throw Error(ErrorKind::config, "heston.windows must lie in [1, n_steps)");
    }
    if (c.heston.dictionary_degree > 3) throw Error(ErrorKind::config, "heston.dictionary_degree must be <= 3");
    if (c.heston.n_seeds == 0) throw Error(ErrorKind::config, "heston.n_seeds must be >= 1");
  }
  if (c.kind == ExperimentKind::enkf) {
    auto check_prior = [](const std::vector<double>& p, const char* key) {
      if (p.size() != 2 || !(p[0] < p[1])) {
        throw Error(ErrorKind::config, std::string("enkf.") + key + " must be [lo, hi] with lo < hi");
      }
    };
    check_prior(c.enkf.prior_theta, "prior_theta");
    check_prior(c.enkf.prior_mu, "prior_mu");
    check_prior(c.enkf.prior_sigma, "prior_sigma");
    if (c.enkf.ensemble_size < 2) throw Error(ErrorKind::config, "enkf.ensemble_size must be >= 2");
    if (!(c.enkf.r > 0.0)) throw Error(ErrorKind::config, "enkf.r must be positive");
    if (c.enkf.tail == 0 || c.enkf.tail > c.enkf.n_steps) throw Error(ErrorKind::config, "enkf.tail must lie in [1, n_steps]");
    if (c.enkf.n_seeds == 0) throw Error(ErrorKind::config, "enkf.n_seeds must be >= 1");
  }
  if (c.kind == ExperimentKind::sensitivity) {
    if (c.sweep.model != "ou" && c.sweep.model != "gbm") throw Error(ErrorKind::config, "sweep.model must be ou or gbm");
    if (c.sweep.values.empty()) throw Error(ErrorKind::config, "sweep.values must not be empty");
    for (std::size_t q = 0; q < c.sweep.values.size(); ++q) {
      const double v = c.sweep.values[q];
      if (!(v >= 0.0) || v != std::floor(v)) throw Error(ErrorKind::config, "sweep.values must be non-negative integers");
      if (q > 0 && !(v > c.sweep.values[q - 1])) throw Error(ErrorKind::config, "sweep.values must be ascending");
    }
  }
  if (c.output.time_stride == 0) throw Error(ErrorKind::config, "output.time_stride must be >= 1");
  if (c.output_dir.empty()) throw Error(ErrorKind::config, "output_dir must not be empty");
}

inline ExperimentConfig parse_config_string(std::string_view text, std::string_view source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at " << e.source().begin;
    throw Error(ErrorKind::config, "cannot parse " + std::string(source) + ": " + msg.str());
  }
  detail::ConfigSection top(&root, "");
  std::string kind_name;
  top.read("kind", kind_name);
  if (kind_name.empty()) throw Error(ErrorKind::config, "missing required key 'kind'");
  ExperimentConfig c = default_config(parse_experiment_kind(kind_name));
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);

  auto section = [&](std::string_view name) {
    const toml::node* n = top.take(name);
    if (n && !n->is_table()) throw Error(ErrorKind::config, "'" + std::string(name) + "' must be a table");
    return detail::ConfigSection(n ? n->as_table() : nullptr, std::string(name));
  };

  auto grid = section("grid");
  grid.read("T", c.grid.horizon);
  grid.read("dt", c.grid.dt);
  grid.read("n_steps", c.grid.n_steps);
  grid.reject_unknown();

  auto chaos = section("chaos");
  std::string basis = std::string(to_string(c.chaos.basis));
  chaos.read("basis", basis);
  c.chaos.basis = parse_basis_kind(basis);
  chaos.read("n_time_modes", c.chaos.n_time_modes);
  chaos.read("max_order", c.chaos.max_order);
  chaos.read("substeps", c.chaos.substeps);
  chaos.reject_unknown();

  auto model = section("model");
  auto& m = c.model;
  switch (c.kind) {
    case ExperimentKind::ou:
    case ExperimentKind::enkf:
      model.read("x0", m.x0);
      model.read("theta", m.theta);
      model.read("mu", m.mu);
      model.read("sigma", m.sigma);
      break;
    case ExperimentKind::gbm:
      model.read("x0", m.x0);
      model.read("mu", m.mu);
      model.read("sigma", m.sigma);
      break;
    case ExperimentKind::wick_drift:
      model.read("x0", m.x0);
      model.read_list("coefficients", m.coefficients);
      model.read("sigma", m.sigma);
      break;
    case ExperimentKind::heat_spde:
    case ExperimentKind::semilinear_spde:
    case ExperimentKind::phi41_estimation:
      model.read("nu", m.nu);
      model.read("n_x", m.n_x);
      model.read("chi0_amplitude", m.chi0_amplitude);
      model.read("chi0_wavenumber", m.chi0_wavenumber);
      if (c.kind != ExperimentKind::heat_spde) model.read_list("reaction", m.reaction);
      break;
    case ExperimentKind::heston_extrapolation:
      model.read("mu", m.mu);
      model.read("kappa", m.kappa);
      model.read("theta_v", m.theta_v);
      model.read("zeta", m.zeta);
      model.read("rho", m.rho);
      model.read("s0", m.s0);
      model.read("v0", m.v0);
      break;
    case ExperimentKind::sensitivity:
      model.read("x0", m.x0);
      model.read("theta", m.theta);
      model.read("mu", m.mu);
      model.read("sigma", m.sigma);
      break;
  }
  model.reject_unknown();

  auto noise = section("noise");
  std::string family = std::string(to_string(c.noise.family));
  noise.read("family", family);
  c.noise.family = parse_spatial_family(family);
  noise.read("n_modes", c.noise.n_modes);
  noise.read("sigma", c.noise.sigma);
  noise.read("power", c.noise.power);
  noise.reject_unknown();

  auto paths = section("paths");
  paths.read("n_paths", c.paths.n_paths);
  paths.read("n_train", c.paths.n_train);
  paths.read("n_test", c.paths.n_test);
  paths.reject_unknown();

  auto est = section("estimation");
  std::string estimator = std::string(to_string(c.estimation.estimator));
  est.read("estimator", estimator);
  c.estimation.estimator = parse_estimator_kind(estimator);
  est.read("lambda", c.estimation.lambda);
  est.read("compression_modes", c.estimation.compression_modes);
  est.read("window_fraction", c.estimation.window_fraction);
  est.read("kl_modes", c.estimation.kl_modes);
  est.reject_unknown();

  auto heston = section("heston");
  heston.read_list("windows", c.heston.windows);
  heston.read("n_seeds", c.heston.n_seeds);
  heston.read("dictionary_degree", c.heston.dictionary_degree);
  heston.reject_unknown();

  auto enkf = section("enkf");
  enkf.read("ensemble_size", c.enkf.ensemble_size);
  enkf.read("r", c.enkf.r);
  enkf.read("n_steps", c.enkf.n_steps);
  enkf.read("dt", c.enkf.dt);
  enkf.read("tail", c.enkf.tail);
  std::string forecast = std::string(to_string(c.enkf.forecast_noise));
  enkf.read("forecast_noise", forecast);
  c.enkf.forecast_noise = parse_forecast_noise(forecast);
  enkf.read("n_seeds", c.enkf.n_seeds);
  enkf.read_list("prior_theta", c.enkf.prior_theta);
  enkf.read_list("prior_mu", c.enkf.prior_mu);
  enkf.read_list("prior_sigma", c.enkf.prior_sigma);
  enkf.reject_unknown();

  auto sweep = section("sweep");
  sweep.read("model", c.sweep.model);
  std::string axis = std::string(to_string(c.sweep.axis));
  sweep.read("axis", axis);
  c.sweep.axis = parse_sweep_axis(axis);
  sweep.read_list("values", c.sweep.values);
  std::string source = std::string(to_string(c.sweep.source));
  sweep.read("source", source);
  c.sweep.source = parse_propagator_source(source);
  sweep.reject_unknown();

  auto output = section("output");
  output.read("save_arrays", c.output.save_arrays);
  output.read("time_stride", c.output.time_stride);
  output.reject_unknown();

  top.reject_unknown();
  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::config, "config file '" + path.string() + "' not found");
  return parse_config_string(read_file(path), path.string());
}

// Resolved config as TOML, restricted to the sections the kind reads.
inline std::string emit_config(const ExperimentConfig& c) {
  using detail::toml_double;
  using detail::toml_list;
  using detail::toml_string;
  std::ostringstream o;
  const auto k = c.kind;
  o << "kind = " << toml_string(to_string(k)) << '\n';
  o << "seed = " << c.seed << '\n';
  o << "output_dir = " << toml_string(c.output_dir) << '\n';
  o << "\n[grid]\nT = " << toml_double(c.grid.horizon) << "\ndt = " << toml_double(c.grid.dt)
    << "\nn_steps = " << c.grid.n_steps << '\n';
  if (k != ExperimentKind::enkf) {
    o << "\n[chaos]\nbasis = " << toml_string(to_string(c.chaos.basis)) << "\nn_time_modes = " << c.chaos.n_time_modes
      << "\nmax_order = " << c.chaos.max_order << "\nsubsteps = " << c.chaos.substeps << '\n';
  }
  const auto& m = c.model;
  o << "\n[model]\n";
  switch (k) {
    case ExperimentKind::ou:
    case ExperimentKind::enkf:
    case ExperimentKind::sensitivity:
      o << "x0 = " << toml_double(m.x0) << "\ntheta = " << toml_double(m.theta) << "\nmu = " << toml_double(m.mu)
        << "\nsigma = " << toml_double(m.sigma) << '\n';
      break;
    case ExperimentKind::gbm:
      o << "x0 = " << toml_double(m.x0) << "\nmu = " << toml_double(m.mu) << "\nsigma = " << toml_double(m.sigma) << '\n';
      break;
    case ExperimentKind::wick_drift:
      o << "x0 = " << toml_double(m.x0) << "\ncoefficients = " << toml_list(m.coefficients)
        << "\nsigma = " << toml_double(m.sigma) << '\n';
      break;
    case ExperimentKind::heat_spde:
    case ExperimentKind::semilinear_spde:
    case ExperimentKind::phi41_estimation:
      o << "nu = " << toml_double(m.nu) << "\nn_x = " << m.n_x << "\nchi0_amplitude = " << toml_double(m.chi0_amplitude)
        << "\nchi0_wavenumber = " << m.chi0_wavenumber << '\n';
      if (k != ExperimentKind::heat_spde) o << "reaction = " << toml_list(m.reaction) << '\n';
      break;
    case ExperimentKind::heston_extrapolation:
      o << "mu = " << toml_double(m.mu) << "\nkappa = " << toml_double(m.kappa) << "\ntheta_v = " << toml_double(m.theta_v)
        << "\nzeta = " << toml_double(m.zeta) << "\nrho = " << toml_double(m.rho) << "\ns0 = " << toml_double(m.s0)
        << "\nv0 = " << toml_double(m.v0) << '\n';
      break;
  }
  if (is_spde(k)) {
    o << "\n[noise]\nfamily = " << toml_string(to_string(c.noise.family)) << "\nn_modes = " << c.noise.n_modes
      << "\nsigma = " << toml_double(c.noise.sigma) << "\npower = " << toml_double(c.noise.power) << '\n';
  }
  if (k != ExperimentKind::enkf) {
    o << "\n[paths]\nn_paths = " << c.paths.n_paths << "\nn_train = " << c.paths.n_train << "\nn_test = " << c.paths.n_test
      << '\n';
    o << "\n[estimation]\nestimator = " << toml_string(to_string(c.estimation.estimator))
      << "\nlambda = " << toml_double(c.estimation.lambda) << "\ncompression_modes = " << c.estimation.compression_modes
      << "\nwindow_fraction = " << toml_double(c.estimation.window_fraction) << "\nkl_modes = " << c.estimation.kl_modes
      << '\n';
  }
  if (k == ExperimentKind::heston_extrapolation) {
    o << "\n[heston]\nwindows = " << toml_list(c.heston.windows) << "\nn_seeds = " << c.heston.n_seeds
      << "\ndictionary_degree = " << c.heston.dictionary_degree << '\n';
  }
  if (k == ExperimentKind::enkf) {
    const auto& e = c.enkf;
    o << "\n[enkf]\nensemble_size = " << e.ensemble_size << "\nr = " << toml_double(e.r) << "\nn_steps = " << e.n_steps
      << "\ndt = " << toml_double(e.dt) << "\ntail = " << e.tail << "\nforecast_noise = " << toml_string(to_string(e.forecast_noise))
      << "\nn_seeds = " << e.n_seeds << "\nprior_theta = " << toml_list(e.prior_theta)
      << "\nprior_mu = " << toml_list(e.prior_mu) << "\nprior_sigma = " << toml_list(e.prior_sigma) << '\n';
  }
  if (k == ExperimentKind::sensitivity) {
    o << "\n[sweep]\nmodel = " << toml_string(c.sweep.model) << "\naxis = " << toml_string(to_string(c.sweep.axis))
      << "\nvalues = " << toml_list(c.sweep.values) << "\nsource = " << toml_string(to_string(c.sweep.source)) << '\n';
  }
  o << "\n[output]\nsave_arrays = " << (c.output.save_arrays ? "true" : "false") << "\ntime_stride = " << c.output.time_stride
    << '\n';
  return o.str();
}

}  // namespace wce
