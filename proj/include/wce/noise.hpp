#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "wce/error.hpp"
#include "wce/parallel.hpp"
#include "wce/rng.hpp"
#include "wce/tensor.hpp"
#include "wce/timebasis.hpp"

namespace wce {

// Brownian increments and cumulative paths for n_paths x d components.
struct NoiseBatch {
  TimeGrid grid;
  std::uint64_t seed = 0;
  Tensor3 increments;  // n_paths x d x n_steps
  Tensor3 paths;       // n_paths x d x (n_steps + 1), paths(., ., 0) = 0

  [[nodiscard]] std::size_t n_paths() const { return increments.dim(0); }
  [[nodiscard]] std::size_t n_components() const { return increments.dim(1); }

  static NoiseBatch from_increments(const TimeGrid& grid, std::uint64_t seed, Tensor3 increments) {
    if (increments.dim(2) != grid.n_steps()) {
      throw Error(ErrorKind::shape, "increment tensor has " + std::to_string(increments.dim(2)) +
                                        " steps, grid has " + std::to_string(grid.n_steps()));
    }
    NoiseBatch b{grid, seed, std::move(increments), {}};
    const std::size_t np = b.increments.dim(0), d = b.increments.dim(1), n = grid.n_steps();
    b.paths = Tensor3(np, d, n + 1);
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t m = 0; m < d; ++m) {
        double w = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          w += b.increments(i, m, k);
          b.paths(i, m, k + 1) = w;
        }
      }
    }
    return b;
  }
};

// Draw (i, m, k) is keyed by (seed, path i, component m, step k).
inline NoiseBatch simulate_brownian(std::size_t n_paths, std::size_t n_components,
                                    const TimeGrid& grid, std::uint64_t seed) {
  if (n_paths == 0 || n_components == 0) {
    throw Error(ErrorKind::parameter, "simulate_brownian needs n_paths >= 1 and d >= 1");
  }
  const std::size_t n = grid.n_steps();
  const double scale = std::sqrt(grid.dt());
  Tensor3 inc(n_paths, n_components, n);
  parallel_for(n_paths, [&](std::size_t i) {
    for (std::size_t m = 0; m < n_components; ++m) {
      for (std::size_t k = 0; k < n; ++k) {
        inc(i, m, k) = scale * rng::normal(seed, rng::Stream::brownian, i, m, k);
      }
    }
  });
  return NoiseBatch::from_increments(grid, seed, std::move(inc));
}

// dW^V = rho dW^S + sqrt(1 - rho^2) dW^indep.
inline NoiseBatch correlate_brownian(const NoiseBatch& driver, const NoiseBatch& independent,
                                     double rho) {
  if (!(rho >= -1.0 && rho <= 1.0)) {
    throw Error(ErrorKind::parameter, "correlation rho=" + std::to_string(rho) + " outside [-1, 1]");
  }
  require_same_shape(driver.increments, independent.increments, "correlate_brownian");
  if (!(driver.grid == independent.grid)) {
    throw Error(ErrorKind::shape, "correlate_brownian: time grids differ");
  }
  const double beta = std::sqrt(1.0 - rho * rho);
  Tensor3 inc(driver.increments.dim(0), driver.increments.dim(1), driver.increments.dim(2));
  for (std::size_t q = 0; q < inc.size(); ++q) {
    inc.data()[q] = rho * driver.increments.data()[q] + beta * independent.increments.data()[q];
  }
  return NoiseBatch::from_increments(driver.grid, driver.seed, std::move(inc));
}

// xi(i, m, j) = int_0^T e_j dW^(i)_m as a left-endpoint Ito sum.
struct GaussianCoords {
  Tensor3 values;  // n_paths x d x J

  [[nodiscard]] std::size_t n_paths() const { return values.dim(0); }
  [[nodiscard]] std::size_t n_components() const { return values.dim(1); }
  [[nodiscard]] std::size_t n_modes() const { return values.dim(2); }
};

inline void require_matching_grid(const BasisSet& basis, const TimeGrid& grid, const char* what) {
  if (std::abs(basis.horizon() - grid.horizon()) > 1e-12 * grid.horizon()) {
    throw Error(ErrorKind::config, std::string(what) + ": basis horizon " +
                                       std::to_string(basis.horizon()) + " differs from grid horizon " +
                                       std::to_string(grid.horizon()));
  }
  if (basis.grid().n_steps() != grid.n_steps()) {
    throw Error(ErrorKind::config, std::string(what) + ": basis tabulated on " +
                                       std::to_string(basis.grid().n_steps()) + " steps, grid has " +
                                       std::to_string(grid.n_steps()));
  }
}

inline GaussianCoords gaussian_coords(const NoiseBatch& batch, const BasisSet& basis) {
  require_matching_grid(basis, batch.grid, "gaussian_coords");
  const std::size_t np = batch.n_paths(), d = batch.n_components(), n = batch.grid.n_steps();
  const std::size_t J = basis.size();
  const Matrix& E = basis.values();
  GaussianCoords out{Tensor3(np, d, J)};
  parallel_for(np, [&](std::size_t i) {
    for (std::size_t m = 0; m < d; ++m) {
      for (std::size_t j = 0; j < J; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += E(j, k) * batch.increments(i, m, k);
        out.values(i, m, j) = s;
      }
    }
  });
  return out;
}

// W_hat(t) = sum_{j < n} xi_j G_j(t).
inline NoiseBatch reconstruct_brownian(const GaussianCoords& coords, const BasisSet& basis,
                                       const TimeGrid& grid, std::size_t truncation) {
  require_matching_grid(basis, grid, "reconstruct_brownian");
  if (truncation > basis.size() || truncation > coords.n_modes()) {
    throw Error(ErrorKind::parameter, "truncation n=" + std::to_string(truncation) +
                                          " exceeds basis size J=" + std::to_string(basis.size()));
  }
  const std::size_t np = coords.n_paths(), d = coords.n_components(), n = grid.n_steps();
  const Matrix& G = basis.running_integrals();
  Tensor3 inc(np, d, n);
  parallel_for(np, [&](std::size_t i) {
    for (std::size_t m = 0; m < d; ++m) {
      double prev = 0.0;
      for (std::size_t k = 1; k <= n; ++k) {
        double w = 0.0;
        for (std::size_t j = 0; j < truncation; ++j) w += coords.values(i, m, j) * G(j, k);
        inc(i, m, k - 1) = w - prev;
        prev = w;
      }
    }
  });
  NoiseBatch out = NoiseBatch::from_increments(grid, 0, std::move(inc));
  // Overwrite the cumulative sums with the direct evaluation so node values
  // carry no accumulated rounding.
  parallel_for(np, [&](std::size_t i) {
    for (std::size_t m = 0; m < d; ++m) {
      for (std::size_t k = 0; k <= n; ++k) {
        double w = 0.0;
        for (std::size_t j = 0; j < truncation; ++j) w += coords.values(i, m, j) * G(j, k);
        out.paths(i, m, k) = w;
      }
    }
  });
  return out;
}

// Spatial eigenfunction families on the periodic grid x_i = i / n_x.
//   torus_fourier: mode 0 is 1, mode 2w-1 is sqrt2 sin(2 pi w x), mode 2w is
//                  sqrt2 cos(2 pi w x); mode n_x - 1 is the Nyquist mode (-1)^i.
//   dirichlet_sine: mode k is sqrt2 sin((k+1) pi x).
enum class SpatialFamily { torus_fourier, dirichlet_sine };

inline std::string_view to_string(SpatialFamily f) {
  return f == SpatialFamily::torus_fourier ? "torus_fourier" : "dirichlet_sine";
}

inline SpatialFamily parse_spatial_family(std::string_view name) {
  if (name == "torus_fourier") return SpatialFamily::torus_fourier;
  if (name == "dirichlet_sine") return SpatialFamily::dirichlet_sine;
  throw Error(ErrorKind::config, "unknown spatial family '" + std::string(name) + "'");
}

// Karhunen-Loeve eigensystem of Q restricted to the spatial grid.
class QSpectrum {
 public:
  QSpectrum(SpatialFamily family, std::size_t n_x, std::vector<double> eigenvalues)
      : family_(family), n_x_(n_x), eigenvalues_(std::move(eigenvalues)) {
    if (n_x < 2) throw Error(ErrorKind::config, "spatial grid needs n_x >= 2");
    const std::size_t max_modes = family == SpatialFamily::torus_fourier ? n_x : n_x - 1;
    if (eigenvalues_.size() > max_modes) {
      throw Error(ErrorKind::config, std::to_string(eigenvalues_.size()) +
                                         " KL modes exceed what an n_x=" + std::to_string(n_x) +
                                         " grid resolves (" + std::to_string(max_modes) + ")");
    }
    for (double l : eigenvalues_) {
      if (!(l >= 0.0) || !std::isfinite(l)) {
        throw Error(ErrorKind::config, "KL eigenvalues must be finite and >= 0");
      }
    }
  }

  // lambda_k = sigma^2 (k+1)^{-p} for k = 0..n_modes-1.
  static QSpectrum power_law(SpatialFamily family, std::size_t n_x, std::size_t n_modes,
                             double sigma, double power) {
    std::vector<double> ev(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
      ev[k] = sigma * sigma * std::pow(static_cast<double>(k + 1), -power);
    }
    return {family, n_x, std::move(ev)};
  }

  [[nodiscard]] SpatialFamily family() const { return family_; }
  [[nodiscard]] std::size_t n_x() const { return n_x_; }
  [[nodiscard]] std::size_t n_modes() const { return eigenvalues_.size(); }
  [[nodiscard]] const std::vector<double>& eigenvalues() const { return eigenvalues_; }
  [[nodiscard]] double eigenvalue(std::size_t k) const { return eigenvalues_.at(k); }

  // Fourier wavenumber of a torus mode.
  [[nodiscard]] std::size_t wavenumber(std::size_t k) const {
    if (family_ == SpatialFamily::torus_fourier && k == n_x_ - 1) return n_x_ / 2;
    return (k + 1) / 2;
  }

  [[nodiscard]] double eigenfunction(std::size_t k, std::size_t i) const {
    const double x = static_cast<double>(i) / static_cast<double>(n_x_);
    if (family_ == SpatialFamily::dirichlet_sine) {
      return std::numbers::sqrt2 * std::sin(static_cast<double>(k + 1) * std::numbers::pi * x);
    }
    if (k == 0) return 1.0;
    if (k == n_x_ - 1) return (i % 2 == 0) ? 1.0 : -1.0;
    const double w = 2.0 * std::numbers::pi * static_cast<double>(wavenumber(k));
    return std::numbers::sqrt2 * (k % 2 == 1 ? std::sin(w * x) : std::cos(w * x));
  }

  // n_modes x n_x table of f_k(x_i).
  [[nodiscard]] Matrix eigenfunction_table() const {
    Matrix f(n_modes(), n_x_);
    for (std::size_t k = 0; k < n_modes(); ++k) {
      for (std::size_t i = 0; i < n_x_; ++i) f(k, i) = eigenfunction(k, i);
    }
    return f;
  }

 private:
  SpatialFamily family_;
  std::size_t n_x_;
  std::vector<double> eigenvalues_;
};

// Q-Brownian field and the scalar mode drivers beta^k it was built from.
struct QField {
  Tensor3 field;     // n_paths x (n_steps + 1) x n_x
  NoiseBatch modes;  // d = n_modes; component k is beta^k
};

inline Tensor3 combine_modes(const Tensor3& mode_paths, const QSpectrum& spectrum,
                             std::size_t n_modes) {
  const std::size_t np = mode_paths.dim(0), nodes = mode_paths.dim(2), nx = spectrum.n_x();
  Matrix f = spectrum.eigenfunction_table();
  for (std::size_t k = 0; k < n_modes; ++k) f.row(k) *= std::sqrt(spectrum.eigenvalue(k));
  Tensor3 field(np, nodes, nx);
  parallel_for(np, [&](std::size_t i) {
    MatrixMap out(field.slice(i).data(), nodes, nx);
    ConstMatrixMap beta(mode_paths.slice(i).data(), mode_paths.dim(1), nodes);
    out.noalias() = beta.topRows(n_modes).transpose() * f.topRows(n_modes);
  });
  return field;
}

// W_t(x) = sum_k sqrt(lambda_k) beta^k_t f_k(x).
inline QField simulate_q_brownian(const QSpectrum& spectrum, const TimeGrid& grid,
                                  std::size_t n_paths, std::uint64_t seed) {
  if (spectrum.n_modes() == 0) {
    return {Tensor3(n_paths, grid.n_nodes(), spectrum.n_x()), {}};
  }
  QField q{{}, simulate_brownian(n_paths, spectrum.n_modes(), grid, seed)};
  q.field = combine_modes(q.modes.paths, spectrum, spectrum.n_modes());
  return q;
}

// W_hat^{(K,n)}_t = sum_{k<K} sqrt(lambda_k) (sum_{j<n} xi_kj G_j(t)) f_k.
inline Tensor3 reconstruct_q_brownian(const GaussianCoords& coords, const QSpectrum& spectrum,
                                      const BasisSet& basis, std::size_t kl_modes,
                                      std::size_t truncation) {
  if (kl_modes > spectrum.n_modes() || kl_modes > coords.n_components()) {
    throw Error(ErrorKind::parameter, "KL truncation K=" + std::to_string(kl_modes) +
                                          " exceeds retained modes " +
                                          std::to_string(spectrum.n_modes()));
  }
  if (truncation > basis.size() || truncation > coords.n_modes()) {
    throw Error(ErrorKind::parameter, "temporal truncation n=" + std::to_string(truncation) +
                                          " exceeds basis size J=" + std::to_string(basis.size()));
  }
  const std::size_t np = coords.n_paths(), nodes = basis.grid().n_nodes();
  if (kl_modes == 0 || truncation == 0) return Tensor3(np, nodes, spectrum.n_x());
  const Matrix& G = basis.running_integrals();
  Tensor3 beta(np, kl_modes, nodes);
  parallel_for(np, [&](std::size_t i) {
    for (std::size_t k = 0; k < kl_modes; ++k) {
      for (std::size_t t = 0; t < nodes; ++t) {
        double w = 0.0;
        for (std::size_t j = 0; j < truncation; ++j) w += coords.values(i, k, j) * G(j, t);
        beta(i, k, t) = w;
      }
    }
  });
  return combine_modes(beta, spectrum, kl_modes);
}

}  // namespace wce
