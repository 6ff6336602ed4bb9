#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "wce/chaos.hpp"
#include "wce/error.hpp"
#include "wce/io.hpp"
#include "wce/noise.hpp"
#include "wce/parallel.hpp"
#include "wce/tensor.hpp"
#include "wce/timebasis.hpp"

namespace wce {

// dX = (a + b X) dt + (c + d X) dW.
struct AffineSdeModel {
  double x0 = 0.0;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;

  static AffineSdeModel ornstein_uhlenbeck(double x0, double theta, double mu, double sigma) {
    return {x0, theta * mu, -theta, sigma, 0.0};
  }
  static AffineSdeModel geometric_bm(double x0, double mu, double sigma) { return {x0, 0.0, mu, 0.0, sigma}; }
};

// dX = sum_p a_p X^{<>p} dt + sigma dW.
struct WickDriftSdeModel {
  double x0 = 0.0;
  std::vector<double> coefficients;  // a_0 .. a_P
  double sigma = 0.0;
};

struct HestonModel {
  double mu = 0.05;
  double kappa = 2.0;
  double theta_v = 0.04;
  double zeta = 0.3;
  double rho = -0.7;
  double s0 = 1.0;
  double v0 = 0.04;

  [[nodiscard]] bool feller_ok() const { return 2.0 * kappa * theta_v >= zeta * zeta; }

  void validate() const {
    if (!(rho >= -1.0 && rho <= 1.0)) throw Error(ErrorKind::parameter, "heston rho outside [-1, 1]");
    if (!(s0 > 0.0)) throw Error(ErrorKind::parameter, "heston S0 must be positive");
    if (!(v0 >= 0.0)) throw Error(ErrorKind::parameter, "heston V0 must be non-negative");
  }
};

// Generic dX = f(t, X) dt + B(t, X) dW with B stored row-major (dim x noise_dim).
struct CallbackSdeModel {
  std::vector<double> x0;
  std::size_t noise_dim = 1;
  std::function<void(double t, const double* x, double* drift)> drift;
  std::function<void(double t, const double* x, double* diffusion)> diffusion;
};

// u_alpha(t_k) for every alpha in `set`.
struct PropagatorTable {
  IndexSetPtr set;
  TimeGrid grid;
  Tensor3 values;  // |set| x dim x n_nodes

  [[nodiscard]] std::size_t state_dim() const { return values.dim(1); }
};

struct SolverOptions {
  std::size_t substeps = 4;
};

namespace detail {

inline void check_solver_inputs(const BasisSet& basis, const ChaosIndexSet& set, const TimeGrid& grid,
                                const SolverOptions& opt) {
  require_matching_grid(basis, grid, "propagator solve");
  if (set.n_components() != 1) {
    throw Error(ErrorKind::parameter, "scalar SDE propagators need an index set over 1 component, got " +
                                          std::to_string(set.n_components()));
  }
  if (set.n_time_modes() > basis.size()) {
    throw Error(ErrorKind::shape, "index set uses " + std::to_string(set.n_time_modes()) +
                                      " temporal modes, basis has " + std::to_string(basis.size()));
  }
  if (set.size() == 0) throw Error(ErrorKind::structural, "empty index set");
  if (!set.closed()) {
    throw Error(ErrorKind::structural, "index set is not closed under subtraction of unit indices");
  }
  if (opt.substeps == 0) throw Error(ErrorKind::config, "RK4 substeps must be >= 1");
}

// Fixed-step RK4 over the grid. rhs(k, t, u, du) gets the grid step k so
// that piecewise-constant basis functions are looked up per step.
template <class Rhs>
Matrix integrate_rk4(const Vector& u0, const TimeGrid& grid, std::size_t substeps, Rhs&& rhs) {
  const std::size_t n = grid.n_steps();
  const auto m = u0.size();
  Matrix out(m, static_cast<Eigen::Index>(n + 1));
  Vector u = u0, k1(m), k2(m), k3(m), k4(m), tmp(m);
  out.col(0) = u;
  const double h = grid.dt() / static_cast<double>(substeps);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t s = 0; s < substeps; ++s) {
      const double t = grid.time(k) + static_cast<double>(s) * h;
      rhs(k, t, u, k1);
      tmp = u + 0.5 * h * k1;
      rhs(k, t + 0.5 * h, tmp, k2);
      tmp = u + 0.5 * h * k2;
      rhs(k, t + 0.5 * h, tmp, k3);
      tmp = u + h * k3;
      rhs(k, t + h, tmp, k4);
      u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!u.allFinite()) {
      throw Error(ErrorKind::numerical, "propagator blow-up (non-finite state) at step " + std::to_string(k + 1));
    }
    out.col(static_cast<Eigen::Index>(k + 1)) = u;
  }
  return out;
}

// Flattened parent list with sqrt(alpha_mj) weights.
struct ParentLink {
  std::size_t child;
  std::size_t parent;
  std::size_t mode;
  double weight;
};

inline std::vector<ParentLink> parent_links(const ChaosIndexSet& set) {
  std::vector<ParentLink> links;
  for (std::size_t q = 0; q < set.size(); ++q) {
    for (const auto& p : set.parents(q)) {
      links.push_back({q, p.index, p.mode, std::sqrt(static_cast<double>(p.power))});
    }
  }
  return links;
}

inline PropagatorTable to_table(const IndexSetPtr& set, const TimeGrid& grid, const Matrix& traj) {
  PropagatorTable t{set, grid, Tensor3(set->size(), 1, grid.n_nodes())};
  for (Eigen::Index q = 0; q < traj.rows(); ++q) {
    for (Eigen::Index k = 0; k < traj.cols(); ++k) {
      t.values(static_cast<std::size_t>(q), 0, static_cast<std::size_t>(k)) = traj(q, k);
    }
  }
  return t;
}

}  // namespace detail

// du_a/dt = a d_{a0} + b u_a + sum_i sqrt(a_i) e_i(t) (c d_{a-e_i,0} + d u_{a-e_i}).
inline PropagatorTable solve_affine_propagators(const AffineSdeModel& model, const BasisSet& basis,
                                                const IndexSetPtr& set, const TimeGrid& grid,
                                                SolverOptions opt = {}) {
  detail::check_solver_inputs(basis, *set, grid, opt);
  const std::size_t zero = *set->find(MultiIndex());
  const auto links = detail::parent_links(*set);
  const std::size_t J = set->n_time_modes();
  std::vector<double> e(J);
  Vector u0 = Vector::Zero(static_cast<Eigen::Index>(set->size()));
  u0(static_cast<Eigen::Index>(zero)) = model.x0;
  auto rhs = [&](std::size_t k, double t, const Vector& u, Vector& du) {
    for (std::size_t j = 0; j < J; ++j) e[j] = basis.value_in_step(j, k, t);
    du = model.b * u;
    du(static_cast<Eigen::Index>(zero)) += model.a;
    for (const auto& l : links) {
      const double src = (l.parent == zero ? model.c : 0.0) + model.d * u(static_cast<Eigen::Index>(l.parent));
      du(static_cast<Eigen::Index>(l.child)) += l.weight * e[l.mode] * src;
    }
  };
  return detail::to_table(set, grid, detail::integrate_rk4(u0, grid, opt.substeps, rhs));
}

// du_a/dt = sum_p a_p (u^{<>p})_a + sigma sum_i sqrt(a_i) e_i(t) d_{a-e_i,0}.
inline PropagatorTable solve_wick_drift_propagators(const WickDriftSdeModel& model, const BasisSet& basis,
                                                    const IndexSetPtr& set, const TimeGrid& grid,
                                                    SolverOptions opt = {}) {
  detail::check_solver_inputs(basis, *set, grid, opt);
  if (model.coefficients.empty()) throw Error(ErrorKind::parameter, "wick drift needs at least a_0");
  const std::size_t P = model.coefficients.size() - 1;
  if (P > set->max_order()) {
    throw Error(ErrorKind::parameter, "wick drift degree P=" + std::to_string(P) + " exceeds max_order K=" +
                                          std::to_string(set->max_order()));
  }
  const std::size_t zero = *set->find(MultiIndex());
  const auto links = detail::parent_links(*set);
  const auto& products = set->product_table();
  const std::size_t J = set->n_time_modes();
  const auto n = static_cast<Eigen::Index>(set->size());
  std::vector<double> e(J);
  Vector power(n), next(n);
  Vector u0 = Vector::Zero(n);
  u0(static_cast<Eigen::Index>(zero)) = model.x0;
  auto rhs = [&](std::size_t k, double t, const Vector& u, Vector& du) {
    for (std::size_t j = 0; j < J; ++j) e[j] = basis.value_in_step(j, k, t);
    power.setZero();
    power(static_cast<Eigen::Index>(zero)) = 1.0;
    du = model.coefficients[0] * power;
    for (std::size_t p = 1; p <= P; ++p) {
      next.setZero();
      for (const auto& pt : products) {
        next(static_cast<Eigen::Index>(pt.c)) +=
            power(static_cast<Eigen::Index>(pt.a)) * u(static_cast<Eigen::Index>(pt.b));
      }
      power.swap(next);
      if (model.coefficients[p] != 0.0) du += model.coefficients[p] * power;
    }
    for (const auto& l : links) {
      if (l.parent == zero) du(static_cast<Eigen::Index>(l.child)) += model.sigma * l.weight * e[l.mode];
    }
  };
  return detail::to_table(set, grid, detail::integrate_rk4(u0, grid, opt.substeps, rhs));
}

// X^(i)(t_k) = sum_alpha u_alpha(t_k) xi_alpha^(i); output n_paths x dim x nodes.
inline Tensor3 reconstruct_paths(const PropagatorTable& table, const WickFeatures& features) {
  require_same_set(*table.set, *features.set, "reconstruct_paths");
  if (static_cast<std::size_t>(features.values.cols()) != table.values.dim(0)) {
    throw Error(ErrorKind::shape, "feature width does not match propagator count");
  }
  Tensor3 out(features.n_paths(), table.values.dim(1), table.values.dim(2));
  out.as_matrix().noalias() = features.values * table.values.as_matrix();
  return out;
}

namespace detail {
inline void check_em_state(const double* x, std::size_t dim, std::size_t path, std::size_t step) {
  for (std::size_t c = 0; c < dim; ++c) {
    if (!std::isfinite(x[c])) {
      throw Error(ErrorKind::numerical, "Euler-Maruyama blow-up on path " + std::to_string(path) + " at step " +
                                            std::to_string(step));
    }
  }
}
}  // namespace detail

// Left-endpoint Euler-Maruyama; output n_paths x 1 x nodes.
inline Tensor3 simulate_em_sde(const AffineSdeModel& model, const NoiseBatch& noise) {
  if (noise.n_components() != 1) throw Error(ErrorKind::shape, "affine SDE needs a 1-component noise batch");
  const std::size_t np = noise.n_paths(), n = noise.grid.n_steps();
  const double dt = noise.grid.dt();
  Tensor3 out(np, 1, n + 1);
  parallel_for(np, [&](std::size_t i) {
    double x = model.x0;
    out(i, 0, 0) = x;
    for (std::size_t k = 0; k < n; ++k) {
      x += (model.a + model.b * x) * dt + (model.c + model.d * x) * noise.increments(i, 0, k);
      detail::check_em_state(&x, 1, i, k + 1);
      out(i, 0, k + 1) = x;
    }
  });
  return out;
}

// Full-truncation Euler for Heston. Noise component 0 drives S and component
// 1 drives V; the caller supplies the correlated pair (see correlate_brownian).
// Output n_paths x 2 x nodes with rows (S, V).
inline Tensor3 simulate_em_sde(const HestonModel& model, const NoiseBatch& noise) {
  model.validate();
  if (noise.n_components() != 2) throw Error(ErrorKind::shape, "heston needs a 2-component noise batch (W^S, W^V)");
  const std::size_t np = noise.n_paths(), n = noise.grid.n_steps();
  const double dt = noise.grid.dt();
  Tensor3 out(np, 2, n + 1);
  parallel_for(np, [&](std::size_t i) {
    double s = model.s0, v = model.v0;
    out(i, 0, 0) = s;
    out(i, 1, 0) = v;
    for (std::size_t k = 0; k < n; ++k) {
      const double vp = std::max(v, 0.0);
      const double root = std::sqrt(vp);
      const double s_next = s + model.mu * s * dt + root * s * noise.increments(i, 0, k);
      v += model.kappa * (model.theta_v - vp) * dt + model.zeta * root * noise.increments(i, 1, k);
      s = s_next;
      const double state[2] = {s, v};
      detail::check_em_state(state, 2, i, k + 1);
      out(i, 0, k + 1) = s;
      out(i, 1, k + 1) = v;
    }
  });
  return out;
}

inline Tensor3 simulate_em_sde(const CallbackSdeModel& model, const NoiseBatch& noise) {
  const std::size_t dim = model.x0.size(), m = model.noise_dim;
  if (dim == 0 || !model.drift || !model.diffusion) {
    throw Error(ErrorKind::config, "callback SDE needs x0, drift and diffusion");
  }
  if (noise.n_components() != m) throw Error(ErrorKind::shape, "noise components do not match model noise_dim");
  const std::size_t np = noise.n_paths(), n = noise.grid.n_steps();
  const double dt = noise.grid.dt();
  Tensor3 out(np, dim, n + 1);
  parallel_for(np, [&](std::size_t i) {
    std::vector<double> x = model.x0, f(dim), B(dim * m);
    for (std::size_t c = 0; c < dim; ++c) out(i, c, 0) = x[c];
    for (std::size_t k = 0; k < n; ++k) {
      const double t = noise.grid.time(k);
      model.drift(t, x.data(), f.data());
      model.diffusion(t, x.data(), B.data());
      for (std::size_t c = 0; c < dim; ++c) {
        double dx = f[c] * dt;
        for (std::size_t r = 0; r < m; ++r) dx += B[c * m + r] * noise.increments(i, r, k);
        x[c] += dx;
      }
      detail::check_em_state(x.data(), dim, i, k + 1);
      for (std::size_t c = 0; c < dim; ++c) out(i, c, k + 1) = x[c];
    }
  });
  return out;
}

inline void write_propagators_csv(std::ostream& out, const PropagatorTable& table) {
  CsvWriter csv(out, {"alpha_id", "state_component", "t", "value"});
  for (std::size_t q = 0; q < table.values.dim(0); ++q) {
    for (std::size_t c = 0; c < table.values.dim(1); ++c) {
      for (std::size_t k = 0; k < table.values.dim(2); ++k) {
        csv << q << c << table.grid.time(k) << table.values(q, c, k);
        csv.end_row();
      }
    }
  }
}

}  // namespace wce
