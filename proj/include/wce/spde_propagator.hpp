#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "wce/chaos.hpp"
#include "wce/error.hpp"
#include "wce/noise.hpp"
#include "wce/parallel.hpp"
#include "wce/sde_propagator.hpp"
#include "wce/tensor.hpp"
#include "wce/timebasis.hpp"

namespace wce {

// Real orthonormal Fourier system on the periodic grid x_i = i / n_x, in the
// torus_fourier mode order of QSpectrum. Coefficients use the normalized
// inner product <u, v> = (1/n_x) sum_i u_i v_i.
class TorusFourier {
 public:
  explicit TorusFourier(std::size_t n_x) : n_x_(n_x) {
    if (n_x < 2 || !std::has_single_bit(n_x)) {
      throw Error(ErrorKind::config, "spatial grid n_x=" + std::to_string(n_x) + " must be a power of two >= 2");
    }
    QSpectrum modes(SpatialFamily::torus_fourier, n_x, std::vector<double>(n_x, 0.0));
    table_ = modes.eigenfunction_table();
    wavenumbers_.resize(n_x);
    for (std::size_t k = 0; k < n_x; ++k) wavenumbers_[k] = modes.wavenumber(k);
  }

  [[nodiscard]] std::size_t n_x() const { return n_x_; }
  [[nodiscard]] const Matrix& table() const { return table_; }
  [[nodiscard]] std::size_t wavenumber(std::size_t k) const { return wavenumbers_[k]; }

  // Eigenvalue of -nu * Laplacian for mode k.
  [[nodiscard]] double decay_rate(std::size_t k, double nu) const {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(wavenumbers_[k]);
    return nu * w * w;
  }

  // Rows of `values` are grid functions; returns their mode coefficients.
  [[nodiscard]] Matrix to_modes(const Eigen::Ref<const Matrix>& values) const {
    return values * table_.transpose() / static_cast<double>(n_x_);
  }
  [[nodiscard]] Matrix from_modes(const Eigen::Ref<const Matrix>& coeffs) const { return coeffs * table_; }

  // Matrix M with (row vector) v M = e^{t nu Laplacian} v.
  [[nodiscard]] Matrix semigroup(double nu, double t) const {
    Matrix scaled = table_;
    for (std::size_t k = 0; k < n_x_; ++k) scaled.row(k) *= std::exp(-decay_rate(k, nu) * t);
    return table_.transpose() * scaled / static_cast<double>(n_x_);
  }

 private:
  std::size_t n_x_;
  Matrix table_;
  std::vector<std::size_t> wavenumbers_;
};

// dX = nu Laplacian X dt + dW on the unit torus, W a Q-Brownian motion.
struct HeatSpdeModel {
  double nu = 1.0;
  std::size_t n_x = 64;
  std::vector<double> chi0;
  QSpectrum spectrum{SpatialFamily::torus_fourier, 64, {}};

  void validate() const {
    if (!(nu > 0.0)) throw Error(ErrorKind::config, "diffusivity nu must be positive");
    if (chi0.size() != n_x) {
      throw Error(ErrorKind::config, "initial condition has " + std::to_string(chi0.size()) +
                                         " samples, grid has n_x=" + std::to_string(n_x));
    }
    if (spectrum.family() != SpatialFamily::torus_fourier) {
      throw Error(ErrorKind::config, "KL eigenfunctions '" + std::string(to_string(spectrum.family())) +
                                         "' are not eigenfunctions of the periodic Laplacian");
    }
    if (spectrum.n_x() != n_x) throw Error(ErrorKind::config, "spectrum grid size differs from model n_x");
  }
};

// Adds a Wick-power reaction sum_p a_p X^{<>p}.
struct SemilinearSpdeModel {
  HeatSpdeModel heat;
  std::vector<double> reaction;  // a_0 .. a_P
};

struct CoefficientField {
  IndexSetPtr set;
  TimeGrid grid;
  Tensor3 values;  // |set| x n_nodes x n_x

  [[nodiscard]] std::size_t n_x() const { return values.dim(2); }
};

namespace detail {

inline void check_spde_inputs(const HeatSpdeModel& model, const BasisSet& basis, const ChaosIndexSet& set,
                              const TimeGrid& grid) {
  model.validate();
  require_matching_grid(basis, grid, "SPDE propagator solve");
  if (set.n_components() != model.spectrum.n_modes()) {
    throw Error(ErrorKind::shape, "index set has " + std::to_string(set.n_components()) +
                                      " components, spectrum retains " +
                                      std::to_string(model.spectrum.n_modes()) + " KL modes");
  }
  if (set.n_time_modes() > basis.size()) {
    throw Error(ErrorKind::shape, "index set uses more temporal modes than the basis provides");
  }
  if (!set.find(MultiIndex())) throw Error(ErrorKind::structural, "index set lacks the zero multi-index");
}

// First-order members alpha = e_{m,i}: (position, KL mode m, temporal mode i).
struct FirstOrder {
  std::size_t index;
  std::size_t kl_mode;
  std::size_t time_mode;
};

inline std::vector<FirstOrder> first_order_members(const ChaosIndexSet& set) {
  std::vector<FirstOrder> out;
  for (std::size_t q = 0; q < set.size(); ++q) {
    const auto& a = set[q];
    if (a.degree() == 1) out.push_back({q, a.entries()[0].component, a.entries()[0].mode});
  }
  return out;
}

}  // namespace detail

// Closed-form solution: u_0 decays mode by mode, first-order fields are
// sqrt(lambda_m) f_m(x) int_0^t exp(-r_m (t-s)) e_i(s) ds, higher orders vanish.
inline CoefficientField solve_heat_propagators(const HeatSpdeModel& model, const BasisSet& basis,
                                               const IndexSetPtr& set, const TimeGrid& grid) {
  detail::check_spde_inputs(model, basis, *set, grid);
  const TorusFourier fourier(model.n_x);
  const std::size_t nx = model.n_x, nodes = grid.n_nodes();
  CoefficientField out{set, grid, Tensor3(set->size(), nodes, nx)};
  const std::size_t zero = *set->find(MultiIndex());
  const Matrix chi = fourier.to_modes(ConstMatrixMap(model.chi0.data(), 1, static_cast<Eigen::Index>(nx)));
  for (std::size_t k = 0; k < nodes; ++k) {
    Matrix c = chi;
    for (std::size_t w = 0; w < nx; ++w) c(0, w) *= std::exp(-fourier.decay_rate(w, model.nu) * grid.time(k));
    MatrixMap(out.values.data() + (zero * nodes + k) * nx, 1, static_cast<Eigen::Index>(nx)) = fourier.from_modes(c);
  }
  for (const auto& f : detail::first_order_members(*set)) {
    const double amp = std::sqrt(model.spectrum.eigenvalue(f.kl_mode));
    const double rate = fourier.decay_rate(f.kl_mode, model.nu);
    for (std::size_t k = 0; k < nodes; ++k) {
      const double g = amp * basis.damped_integral(f.time_mode, rate, 0.0, grid.time(k));
      for (std::size_t i = 0; i < nx; ++i) out.values(f.index, k, i) = g * fourier.table()(f.kl_mode, i);
    }
  }
  return out;
}

struct SplittingOptions {
  std::size_t reaction_substeps = 4;
};

// Strang splitting per grid step: half reaction step (RK4), exact linear step
// with the noise forcing integrated by Duhamel, half reaction step.
inline CoefficientField solve_semilinear_propagators(const SemilinearSpdeModel& model, const BasisSet& basis,
                                                     const IndexSetPtr& set, const TimeGrid& grid,
                                                     SplittingOptions opt = {}) {
  detail::check_spde_inputs(model.heat, basis, *set, grid);
  if (model.reaction.empty()) throw Error(ErrorKind::parameter, "reaction needs at least a_0");
  const std::size_t P = model.reaction.size() - 1;
  if (P > set->max_order()) {
    throw Error(ErrorKind::parameter, "reaction degree P=" + std::to_string(P) + " exceeds max_order K=" +
                                          std::to_string(set->max_order()));
  }
  if (opt.reaction_substeps == 0) throw Error(ErrorKind::config, "reaction substeps must be >= 1");
  const auto& heat = model.heat;
  const TorusFourier fourier(heat.n_x);
  const auto n_alpha = static_cast<Eigen::Index>(set->size());
  const auto nx = static_cast<Eigen::Index>(heat.n_x);
  const std::size_t nodes = grid.n_nodes(), zero = *set->find(MultiIndex());
  const auto first = detail::first_order_members(*set);
  const double dt = grid.dt();

  Matrix decay(1, nx);
  for (Eigen::Index w = 0; w < nx; ++w) decay(0, w) = std::exp(-fourier.decay_rate(static_cast<std::size_t>(w), heat.nu) * dt);
  std::vector<double> amp(first.size()), rate(first.size());
  for (std::size_t q = 0; q < first.size(); ++q) {
    amp[q] = std::sqrt(heat.spectrum.eigenvalue(first[q].kl_mode));
    rate[q] = fourier.decay_rate(first[q].kl_mode, heat.nu);
  }

  Matrix power(n_alpha, nx), next(n_alpha, nx);
  auto reaction = [&](const Matrix& u, Matrix& du) {
    power.setZero();
    power.row(static_cast<Eigen::Index>(zero)).setOnes();
    du = model.reaction[0] * power;
    for (std::size_t p = 1; p <= P; ++p) {
      wick_product_into(power, u, *set, next);
      power.swap(next);
      if (model.reaction[p] != 0.0) du += model.reaction[p] * power;
    }
  };
  Matrix k1(n_alpha, nx), k2(n_alpha, nx), k3(n_alpha, nx), k4(n_alpha, nx), tmp(n_alpha, nx);
  auto reaction_flow = [&](Matrix& u, double span) {
    const double h = span / static_cast<double>(opt.reaction_substeps);
    for (std::size_t s = 0; s < opt.reaction_substeps; ++s) {
      reaction(u, k1);
      tmp = u + 0.5 * h * k1;
      reaction(tmp, k2);
      tmp = u + 0.5 * h * k2;
      reaction(tmp, k3);
      tmp = u + h * k3;
      reaction(tmp, k4);
      u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  };

  CoefficientField out{set, grid, Tensor3(set->size(), nodes, heat.n_x)};
  Matrix u = Matrix::Zero(n_alpha, nx);
  u.row(static_cast<Eigen::Index>(zero)) = ConstMatrixMap(heat.chi0.data(), 1, nx);
  auto store = [&](std::size_t k) {
    for (Eigen::Index q = 0; q < n_alpha; ++q) {
      for (Eigen::Index i = 0; i < nx; ++i) {
        out.values(static_cast<std::size_t>(q), k, static_cast<std::size_t>(i)) = u(q, i);
      }
    }
  };
  store(0);
  const bool has_reaction = std::any_of(model.reaction.begin(), model.reaction.end(), [](double a) { return a != 0.0; });
  for (std::size_t k = 0; k + 1 < nodes; ++k) {
    if (has_reaction) reaction_flow(u, 0.5 * dt);
    Matrix c = fourier.to_modes(u);
    c.array().rowwise() *= decay.row(0).array();
    for (std::size_t q = 0; q < first.size(); ++q) {
      c(static_cast<Eigen::Index>(first[q].index), static_cast<Eigen::Index>(first[q].kl_mode)) +=
          amp[q] * basis.damped_integral(first[q].time_mode, rate[q], grid.time(k), grid.time(k + 1));
    }
    u = fourier.from_modes(c);
    if (has_reaction) reaction_flow(u, 0.5 * dt);
    if (!u.allFinite()) {
      throw Error(ErrorKind::numerical, "coefficient field blow-up (non-finite) at step " + std::to_string(k + 1));
    }
    store(k + 1);
  }
  return out;
}

// X^(i)(t_k, x) = sum_alpha u_alpha(t_k, x) xi_alpha^(i); n_paths x nodes x n_x.
inline Tensor3 reconstruct_field(const CoefficientField& field, const WickFeatures& features) {
  require_same_set(*field.set, *features.set, "reconstruct_field");
  if (static_cast<std::size_t>(features.values.cols()) != field.values.dim(0)) {
    throw Error(ErrorKind::shape, "feature width does not match coefficient count");
  }
  Tensor3 out(features.n_paths(), field.values.dim(1), field.values.dim(2));
  out.as_matrix().noalias() = features.values * field.values.as_matrix();
  return out;
}

using PointwiseDrift = std::function<double(double)>;

// Spectral Euler-Maruyama: u_{k+1} = S(dt) (u_k + dt f(u_k) + dW_k).
// `q_field` holds cumulative Q-Brownian values (n_paths x nodes x n_x).
inline Tensor3 simulate_em_spde(const HeatSpdeModel& model, const Tensor3& q_field, const TimeGrid& grid,
                                const PointwiseDrift& drift = {}) {
  model.validate();
  const std::size_t np = q_field.dim(0), nodes = grid.n_nodes(), nx = model.n_x;
  if (q_field.dim(1) != nodes || q_field.dim(2) != nx) {
    throw Error(ErrorKind::shape, "Q-field shape " + shape_string(q_field) + " does not match grid (" +
                                      std::to_string(nodes) + " nodes, n_x=" + std::to_string(nx) + ")");
  }
  const TorusFourier fourier(nx);
  const Matrix S = fourier.semigroup(model.nu, grid.dt());
  const double dt = grid.dt();
  Tensor3 out(np, nodes, nx);
  parallel_for(np, [&](std::size_t p) {
    Matrix u = ConstMatrixMap(model.chi0.data(), 1, static_cast<Eigen::Index>(nx));
    Matrix v(1, static_cast<Eigen::Index>(nx));
    std::copy(model.chi0.begin(), model.chi0.end(), &out(p, 0, 0));
    for (std::size_t k = 0; k + 1 < nodes; ++k) {
      for (std::size_t i = 0; i < nx; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        v(0, ii) = u(0, ii) + (drift ? dt * drift(u(0, ii)) : 0.0) + q_field(p, k + 1, i) - q_field(p, k, i);
      }
      u.noalias() = v * S;
      if (!u.allFinite()) {
        throw Error(ErrorKind::numerical, "SPDE Euler-Maruyama blow-up on path " + std::to_string(p) +
                                              " at step " + std::to_string(k + 1));
      }
      std::copy(u.data(), u.data() + nx, &out(p, k + 1, 0));
    }
  });
  return out;
}

// Initial condition helpers on the grid x_i = i / n_x.
inline std::vector<double> sine_initial_condition(std::size_t n_x, double amplitude, std::size_t wavenumber) {
  std::vector<double> chi(n_x);
  for (std::size_t i = 0; i < n_x; ++i) {
    chi[i] = amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(wavenumber) * static_cast<double>(i) /
                                  static_cast<double>(n_x));
  }
  return chi;
}

}  // namespace wce
