#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wce/chaos.hpp"
#include "wce/error.hpp"
#include "wce/noise.hpp"
#include "wce/parallel.hpp"
#include "wce/sde_propagator.hpp"
#include "wce/spde_propagator.hpp"
#include "wce/tensor.hpp"
#include "wce/timebasis.hpp"

namespace wce {

// Propagators are estimated as linear-in-features regressions of trajectory
// data on Wick features, in place of a trained neural operator.
enum class EstimatorKind { mc_projection, ridge };

inline std::string_view to_string(EstimatorKind k) { return k == EstimatorKind::ridge ? "ridge" : "mc_projection"; }

inline EstimatorKind parse_estimator_kind(std::string_view s) {
  if (s == "ridge") return EstimatorKind::ridge;
  if (s == "mc_projection") return EstimatorKind::mc_projection;
  throw Error(ErrorKind::config, "unknown estimator '" + std::string(s) + "' (mc_projection|ridge)");
}

struct FitConfig {
  EstimatorKind kind = EstimatorKind::ridge;
  // Ridge strength; unset means 1e-8 x mean diagonal of Phi^T Phi.
  std::optional<double> lambda;
  // Temporal compression: fit coefficients in this many basis modes instead
  // of per time node. 0 disables it.
  std::size_t compression_modes = 0;
  BasisKind compression_basis = BasisKind::trig;
  double window_fraction = 1.0;

  void validate() const {
    if (lambda && !(*lambda >= 0.0)) throw Error(ErrorKind::config, "ridge lambda must be >= 0");
    if (!(window_fraction > 0.0 && window_fraction <= 1.0)) {
      throw Error(ErrorKind::config, "training window fraction must lie in (0, 1]");
    }
  }
};

// U = Phi^T Y / N, one column per output.
inline Matrix mc_projection(const Eigen::Ref<const Matrix>& targets, const Matrix& features) {
  if (targets.rows() == 0 || features.rows() == 0) throw Error(ErrorKind::empty_data, "no paths to project");
  if (targets.rows() != features.rows()) {
    throw Error(ErrorKind::shape, "path counts differ: " + std::to_string(targets.rows()) + " trajectories, " +
                                      std::to_string(features.rows()) + " feature rows");
  }
  return features.transpose() * targets / static_cast<double>(targets.rows());
}

inline double default_ridge_lambda(const Matrix& gram) {
  return 1e-8 * gram.diagonal().mean();
}

// Solves (Phi^T Phi + lambda I) U = Phi^T Y.
inline Matrix ridge_solve(const Eigen::Ref<const Matrix>& targets, const Matrix& features,
                          std::optional<double> lambda) {
  if (targets.rows() == 0 || features.rows() == 0) throw Error(ErrorKind::empty_data, "no paths to fit");
  if (targets.rows() != features.rows()) {
    throw Error(ErrorKind::shape, "path counts differ: " + std::to_string(targets.rows()) + " trajectories, " +
                                      std::to_string(features.rows()) + " feature rows");
  }
  Eigen::MatrixXd gram = features.transpose() * features;
  const double lam = lambda ? *lambda : default_ridge_lambda(Matrix(gram));
  gram.diagonal().array() += lam;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (llt.info() != Eigen::Success || !(rcond >= 1e-12)) {
    throw Error(ErrorKind::rank_deficient,
                "normal equations are singular (reciprocal condition " + std::to_string(rcond) + " at lambda " +
                    std::to_string(lam) + "); use a ridge strength lambda > 0 or more paths");
  }
  Eigen::MatrixXd rhs = features.transpose() * targets;
  return llt.solve(rhs);
}

inline Matrix fit_linear(const Eigen::Ref<const Matrix>& targets, const Matrix& features, const FitConfig& cfg) {
  cfg.validate();
  return cfg.kind == EstimatorKind::ridge ? ridge_solve(targets, features, cfg.lambda)
                                          : mc_projection(targets, features);
}

// Tensor versions: trajectories n_paths x d1 x d2 -> coefficients |set| x d1 x d2.
inline Tensor3 mc_projection(const Tensor3& trajectories, const WickFeatures& features) {
  if (trajectories.dim(0) == 0) throw Error(ErrorKind::empty_data, "no paths to project");
  Tensor3 out(features.set->size(), trajectories.dim(1), trajectories.dim(2));
  out.as_matrix() = mc_projection(trajectories.as_matrix(), features.values);
  return out;
}

inline Tensor3 ridge_fit(const Tensor3& trajectories, const WickFeatures& features, const FitConfig& cfg = {}) {
  cfg.validate();
  if (trajectories.dim(0) == 0) throw Error(ErrorKind::empty_data, "no paths to fit");
  Tensor3 out(features.set->size(), trajectories.dim(1), trajectories.dim(2));
  out.as_matrix() = ridge_solve(trajectories.as_matrix(), features.values, cfg.lambda);
  return out;
}

namespace detail {

// Fits rows of `series` (n_paths x (components * nodes), time fastest) over
// the given grid, optionally through temporal coefficients.
inline Matrix fit_series(const Matrix& series, std::size_t components, const TimeGrid& grid,
                         const WickFeatures& features, const FitConfig& cfg) {
  const std::size_t nodes = grid.n_nodes();
  if (cfg.compression_modes == 0) return fit_linear(series, features.values, cfg);
  const BasisSet basis(cfg.compression_basis, cfg.compression_modes, grid);
  const std::size_t np = static_cast<std::size_t>(series.rows()), J = basis.size();
  Matrix coeffs(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(components * J));
  for (std::size_t c = 0; c < components; ++c) {
    auto block = series.middleCols(static_cast<Eigen::Index>(c * nodes), static_cast<Eigen::Index>(nodes));
    coeffs.middleCols(static_cast<Eigen::Index>(c * J), static_cast<Eigen::Index>(J)) =
        project_time_series(block, basis).coefficients;
  }
  const Matrix fitted = fit_linear(coeffs, features.values, cfg);
  Matrix out(fitted.rows(), static_cast<Eigen::Index>(components * nodes));
  for (std::size_t c = 0; c < components; ++c) {
    out.middleCols(static_cast<Eigen::Index>(c * nodes), static_cast<Eigen::Index>(nodes)) =
        fitted.middleCols(static_cast<Eigen::Index>(c * J), static_cast<Eigen::Index>(J)) * basis.values();
  }
  return out;
}

inline std::size_t window_steps(const TimeGrid& grid, double fraction) {
  const auto steps = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(grid.n_steps()) + 1e-9));
  if (steps == 0) throw Error(ErrorKind::config, "training window holds no time steps");
  return steps;
}

}  // namespace detail

// SDE data n_paths x dim x nodes -> propagators on the training window grid.
inline PropagatorTable fit_propagators(const Tensor3& trajectories, const WickFeatures& features,
                                       const TimeGrid& grid, const FitConfig& cfg = {}) {
  cfg.validate();
  if (trajectories.dim(0) == 0) throw Error(ErrorKind::empty_data, "no paths to fit");
  if (trajectories.dim(2) != grid.n_nodes()) throw Error(ErrorKind::shape, "trajectory length does not match grid");
  const std::size_t steps = detail::window_steps(grid, cfg.window_fraction);
  const TimeGrid window = grid.prefix(steps);
  const std::size_t np = trajectories.dim(0), dim = trajectories.dim(1), nodes = window.n_nodes();
  Matrix series(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(dim * nodes));
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t k = 0; k < nodes; ++k) {
        series(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c * nodes + k)) = trajectories(i, c, k);
      }
    }
  }
  PropagatorTable out{features.set, window, Tensor3(features.set->size(), dim, nodes)};
  out.values.as_matrix() = detail::fit_series(series, dim, window, features, cfg);
  return out;
}

// SPDE data n_paths x nodes x n_x -> coefficient fields on the window grid.
inline CoefficientField fit_coefficient_field(const Tensor3& trajectories, const WickFeatures& features,
                                              const TimeGrid& grid, const FitConfig& cfg = {}) {
  cfg.validate();
  if (trajectories.dim(0) == 0) throw Error(ErrorKind::empty_data, "no paths to fit");
  if (trajectories.dim(1) != grid.n_nodes()) throw Error(ErrorKind::shape, "trajectory length does not match grid");
  const std::size_t steps = detail::window_steps(grid, cfg.window_fraction);
  const TimeGrid window = grid.prefix(steps);
  const std::size_t np = trajectories.dim(0), nodes = window.n_nodes(), nx = trajectories.dim(2);
  // Reorder to (x, t) so each spatial point is one time series.
  Matrix series(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(nx * nodes));
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t k = 0; k < nodes; ++k) {
      for (std::size_t x = 0; x < nx; ++x) {
        series(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(x * nodes + k)) = trajectories(i, k, x);
      }
    }
  }
  const Matrix fitted = detail::fit_series(series, nx, window, features, cfg);
  CoefficientField out{features.set, window, Tensor3(features.set->size(), nodes, nx)};
  for (std::size_t q = 0; q < features.set->size(); ++q) {
    for (std::size_t k = 0; k < nodes; ++k) {
      for (std::size_t x = 0; x < nx; ++x) {
        out.values(q, k, x) = fitted(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(x * nodes + k));
      }
    }
  }
  return out;
}

// Mean over paths of ||pred_i - truth_i|| / ||truth_i||.
inline double relative_l2(const Tensor3& predicted, const Tensor3& truth) {
  require_same_shape(predicted, truth, "relative_l2");
  const std::size_t np = truth.dim(0);
  if (np == 0) throw Error(ErrorKind::empty_data, "relative_l2 over zero paths");
  double total = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    const auto p = predicted.slice(i);
    const auto t = truth.slice(i);
    double num = 0.0, den = 0.0;
    for (std::size_t q = 0; q < t.size(); ++q) {
      num += (p[q] - t[q]) * (p[q] - t[q]);
      den += t[q] * t[q];
    }
    if (!(den > 0.0)) {
      throw Error(ErrorKind::undefined_metric, "relative L2 undefined: truth has zero norm on path " + std::to_string(i));
    }
    total += std::sqrt(num / den);
  }
  return total / static_cast<double>(np);
}

// Atoms t^p (p <= 3) and exp(c t).
class TimeDictionary {
 public:
  struct Atom {
    enum class Kind { monomial, exponential } kind;
    double parameter;  // degree or rate

    [[nodiscard]] double operator()(double t) const {
      return kind == Kind::monomial ? std::pow(t, parameter) : std::exp(parameter * t);
    }
    [[nodiscard]] std::string name() const {
      return kind == Kind::monomial ? "t^" + format_double(parameter) : "exp(" + format_double(parameter) + " t)";
    }
  };

  TimeDictionary() = default;
  explicit TimeDictionary(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw Error(ErrorKind::config, "time dictionary needs at least one atom");
    for (const auto& a : atoms_) {
      if (a.kind == Atom::Kind::monomial &&
          (a.parameter < 0 || a.parameter > 3 || a.parameter != std::floor(a.parameter))) {
        throw Error(ErrorKind::config, "monomial atoms are limited to t^0 .. t^3");
      }
    }
  }

  static TimeDictionary polynomial(unsigned degree) {
    std::vector<Atom> atoms;
    for (unsigned p = 0; p <= degree; ++p) atoms.push_back({Atom::Kind::monomial, static_cast<double>(p)});
    return TimeDictionary(std::move(atoms));
  }
  static TimeDictionary exponentials(const std::vector<double>& rates) {
    std::vector<Atom> atoms;
    for (double r : rates) atoms.push_back({Atom::Kind::exponential, r});
    return TimeDictionary(std::move(atoms));
  }

  [[nodiscard]] const std::vector<Atom>& atoms() const { return atoms_; }
  [[nodiscard]] std::size_t size() const { return atoms_.size(); }

  // Rows are times, columns atoms.
  [[nodiscard]] Matrix design(const TimeGrid& grid) const {
    Matrix a(static_cast<Eigen::Index>(grid.n_nodes()), static_cast<Eigen::Index>(atoms_.size()));
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      for (std::size_t q = 0; q < atoms_.size(); ++q) {
        a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(q)) = atoms_[q](grid.time(k));
      }
    }
    return a;
  }

 private:
  std::vector<Atom> atoms_;
};

inline double gram_condition_number(const Matrix& design) {
  const Eigen::MatrixXd gram = design.transpose() * design;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// Least-squares fit of every tabulated propagator onto the dictionary over
// the table's (window) grid, evaluated on `full_grid`.
inline PropagatorTable extrapolate_propagators(const PropagatorTable& window_table, const TimeDictionary& dict,
                                               const TimeGrid& full_grid) {
  const TimeGrid& w = window_table.grid;
  if (std::abs(w.dt() - full_grid.dt()) > 1e-12 * full_grid.dt() || w.n_steps() > full_grid.n_steps()) {
    throw Error(ErrorKind::shape, "window grid is not a prefix of the full grid");
  }
  const Matrix A = dict.design(w);
  const double cond = gram_condition_number(A);
  if (!(cond <= 1e8)) {
    throw Error(ErrorKind::conditioning, "dictionary Gram matrix condition number " + format_double(cond) +
                                             " exceeds 1e8 on the training window");
  }
  const Matrix B = dict.design(full_grid);
  const std::size_t n_alpha = window_table.values.dim(0), dim = window_table.values.dim(1);
  Matrix y(static_cast<Eigen::Index>(w.n_nodes()), static_cast<Eigen::Index>(n_alpha * dim));
  for (std::size_t q = 0; q < n_alpha; ++q) {
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t k = 0; k < w.n_nodes(); ++k) {
        y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(q * dim + c)) = window_table.values(q, c, k);
      }
    }
  }
  const Eigen::MatrixXd coef = Eigen::MatrixXd(A).colPivHouseholderQr().solve(Eigen::MatrixXd(y));
  const Matrix full = B * coef;
  PropagatorTable out{window_table.set, full_grid, Tensor3(n_alpha, dim, full_grid.n_nodes())};
  for (std::size_t q = 0; q < n_alpha; ++q) {
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t k = 0; k < full_grid.n_nodes(); ++k) {
        out.values(q, c, k) = full(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(q * dim + c));
      }
    }
  }
  return out;
}

// Sensitivity sweep over one axis of a scalar affine-SDE experiment.
enum class SweepAxis { n_time_modes, max_order, n_paths };
enum class PropagatorSource { solve, ridge, mc_projection };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::n_time_modes: return "n_time_modes";
    case SweepAxis::max_order: return "max_order";
    case SweepAxis::n_paths: return "n_paths";
  }
  return "";
}
inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "n_time_modes") return SweepAxis::n_time_modes;
  if (s == "max_order") return SweepAxis::max_order;
  if (s == "n_paths") return SweepAxis::n_paths;
  throw Error(ErrorKind::config, "unknown sweep axis '" + std::string(s) + "' (n_time_modes|max_order|n_paths)");
}
inline std::string_view to_string(PropagatorSource s) {
  switch (s) {
    case PropagatorSource::solve: return "solve";
    case PropagatorSource::ridge: return "ridge";
    case PropagatorSource::mc_projection: return "mc_projection";
  }
  return "";
}
inline PropagatorSource parse_propagator_source(std::string_view s) {
  if (s == "solve") return PropagatorSource::solve;
  if (s == "ridge") return PropagatorSource::ridge;
  if (s == "mc_projection") return PropagatorSource::mc_projection;
  throw Error(ErrorKind::config, "unknown propagator source '" + std::string(s) + "' (solve|ridge|mc_projection)");
}

struct SweepSpec {
  AffineSdeModel model;
  TimeGrid grid;
  BasisKind basis = BasisKind::haar;
  std::size_t n_time_modes = 16;
  unsigned max_order = 1;
  std::size_t n_paths = 1000;       // training paths (fit sources only)
  std::size_t n_test_paths = 200;   // evaluation paths
  std::uint64_t seed = 0;
  PropagatorSource source = PropagatorSource::solve;
  FitConfig fit;
  SolverOptions solver;
};

struct SweepRow {
  double value;
  double metric;
  double seconds;
};

// Metric per value: relative L2 of the chaos reconstruction against
// Euler-Maruyama paths driven by the same test increments.
inline std::vector<SweepRow> sensitivity_sweep(const SweepSpec& spec, SweepAxis axis, const std::vector<double>& values) {
  for (std::size_t q = 1; q < values.size(); ++q) {
    if (!(values[q] > values[q - 1])) throw Error(ErrorKind::config, "sweep values must be strictly ascending");
  }
  std::vector<SweepRow> rows;
  for (double v : values) {
    const auto start = std::chrono::steady_clock::now();
    SweepSpec s = spec;
    if (!(v >= 0.0) || v != std::floor(v)) throw Error(ErrorKind::config, "sweep values must be non-negative integers");
    const auto iv = static_cast<std::size_t>(v);
    switch (axis) {
      case SweepAxis::n_time_modes: s.n_time_modes = iv; break;
      case SweepAxis::max_order: s.max_order = static_cast<unsigned>(iv); break;
      case SweepAxis::n_paths: s.n_paths = iv; break;
    }
    ChaosIndexSet::check_bounds(1, s.n_time_modes, s.max_order);
    const BasisSet basis(s.basis, s.n_time_modes, s.grid);
    const auto set = index_set(1, s.n_time_modes, s.max_order);
    const bool fitted = s.source != PropagatorSource::solve;
    const std::size_t n_train = fitted ? s.n_paths : 0;
    const NoiseBatch noise = simulate_brownian(n_train + s.n_test_paths, 1, s.grid, s.seed);
    const Tensor3 em = simulate_em_sde(s.model, noise);
    const WickFeatures features = wick_features(gaussian_coords(noise, basis), set);
    auto take_rows = [](const Matrix& m, std::size_t from, std::size_t count) {
      return Matrix(m.middleRows(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(count)));
    };
    auto take_paths = [](const Tensor3& t, std::size_t from, std::size_t count) {
      Tensor3 out(count, t.dim(1), t.dim(2));
      std::copy(t.data() + from * t.dim(1) * t.dim(2), t.data() + (from + count) * t.dim(1) * t.dim(2), out.data());
      return out;
    };
    const WickFeatures test_features{set, take_rows(features.values, n_train, s.n_test_paths)};
    const Tensor3 test_truth = take_paths(em, n_train, s.n_test_paths);
    PropagatorTable table;
    if (!fitted) {
      table = solve_affine_propagators(s.model, basis, set, s.grid, s.solver);
    } else {
      FitConfig fc = s.fit;
      fc.kind = s.source == PropagatorSource::ridge ? EstimatorKind::ridge : EstimatorKind::mc_projection;
      fc.window_fraction = 1.0;
      const WickFeatures train_features{set, take_rows(features.values, 0, n_train)};
      table = fit_propagators(take_paths(em, 0, n_train), train_features, s.grid, fc);
    }
    const double metric = relative_l2(reconstruct_paths(table, test_features), test_truth);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back({v, metric, secs});
  }
  return rows;
}

}  // namespace wce
