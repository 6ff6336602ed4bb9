#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wce/error.hpp"
#include "wce/tensor.hpp"

namespace wce {

// Uniform grid t_k = k T / n on [0, T].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
      throw Error(ErrorKind::config, "time grid horizon must be positive and finite");
    }
    if (n_steps == 0) throw Error(ErrorKind::config, "time grid needs n_steps >= 1");
  }

  // Grid with step dt; T must be an integer multiple of dt up to 1e-9 relative.
  static TimeGrid from_step(double horizon, double dt) {
    if (!(dt > 0.0)) throw Error(ErrorKind::config, "time step dt must be positive");
    const double steps = horizon / dt;
    const double rounded = std::round(steps);
    if (rounded < 1.0 || std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
      throw Error(ErrorKind::config, "horizon T is not an integer multiple of dt");
    }
    return {horizon, static_cast<std::size_t>(rounded)};
  }

  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] std::size_t n_steps() const { return n_steps_; }
  [[nodiscard]] std::size_t n_nodes() const { return n_steps_ + 1; }
  [[nodiscard]] double dt() const { return horizon_ / static_cast<double>(n_steps_); }
  [[nodiscard]] double time(std::size_t k) const {
    return horizon_ * static_cast<double>(k) / static_cast<double>(n_steps_);
  }

  // First `steps` steps of this grid as a grid of their own.
  [[nodiscard]] TimeGrid prefix(std::size_t steps) const { return {time(steps), steps}; }

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_ = 1.0;
  std::size_t n_steps_ = 1;
};

enum class BasisKind { haar, trig };

inline std::string_view to_string(BasisKind kind) {
  return kind == BasisKind::haar ? "haar" : "trig";
}

inline BasisKind parse_basis_kind(std::string_view name) {
  if (name == "haar") return BasisKind::haar;
  if (name == "trig") return BasisKind::trig;
  throw Error(ErrorKind::config, "unknown basis kind '" + std::string(name) + "' (haar|trig)");
}

// Orthonormal basis {e_j} of L^2([0,T]) tabulated on a TimeGrid together with
// the running integrals G_j(t) = int_0^t e_j(s) ds.
//
// Modes are 0-based. Mode 0 is the constant 1/sqrt(T) for both kinds.
//   haar: mode j >= 1 is the wavelet at level l = floor(log2 j), shift
//         s = j - 2^l, supported on [s T/2^l, (s+1) T/2^l), positive half
//         first. Values are right-continuous; at t = T the left limit is used.
//   trig: mode j >= 1 is sqrt(2/T) cos(j pi t / T).
class BasisSet {
 public:
  BasisSet(BasisKind kind, std::size_t size, const TimeGrid& grid)
      : kind_(kind), size_(size), grid_(grid) {
    if (size == 0) throw Error(ErrorKind::config, "basis size J must be >= 1");
    if (kind == BasisKind::haar) {
      if (!std::has_single_bit(size)) {
        throw Error(ErrorKind::config,
                    "haar basis size J=" + std::to_string(size) + " must be a power of two");
      }
      if (grid.n_steps() % size != 0) {
        throw Error(ErrorKind::config, "haar basis needs n_steps (" +
                                           std::to_string(grid.n_steps()) +
                                           ") to be a multiple of J (" + std::to_string(size) + ")");
      }
    }
    const std::size_t nodes = grid.n_nodes();
    values_ = Matrix(size, nodes);
    running_ = Matrix(size, nodes);
    for (std::size_t j = 0; j < size; ++j) {
      for (std::size_t k = 0; k < nodes; ++k) {
        values_(j, k) = k < grid.n_steps() ? node_value(j, k) : left_value(j, horizon());
        running_(j, k) = antiderivative(j, grid.time(k));
      }
    }
  }

  [[nodiscard]] BasisKind kind() const { return kind_; }
  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] double horizon() const { return grid_.horizon(); }
  [[nodiscard]] const TimeGrid& grid() const { return grid_; }

  // E(j, k) = e_j(t_k) from the right for k < n_steps; column n_steps holds
  // the left limit at T.
  [[nodiscard]] const Matrix& values() const { return values_; }
  // G(j, k) = G_j(t_k).
  [[nodiscard]] const Matrix& running_integrals() const { return running_; }

  // Right-continuous value e_j(t); the left limit at t = T.
  [[nodiscard]] double value(std::size_t j, double t) const {
    check_mode(j);
    if (t >= horizon()) return left_value(j, horizon());
    if (kind_ == BasisKind::trig) return trig_value(j, t);
    if (j == 0) return 1.0 / std::sqrt(horizon());
    const auto w = haar_wavelet(j);
    const double u = t / w.width;
    if (u < w.start || u >= w.start + 1.0) return 0.0;
    return (u - w.start) < 0.5 ? w.amplitude : -w.amplitude;
  }

  // Left limit e_j(t^-).
  [[nodiscard]] double left_value(std::size_t j, double t) const {
    check_mode(j);
    if (kind_ == BasisKind::trig) return trig_value(j, t);
    if (j == 0) return 1.0 / std::sqrt(horizon());
    const auto w = haar_wavelet(j);
    const double u = t / w.width;
    if (u <= w.start || u > w.start + 1.0) return 0.0;
    return (u - w.start) <= 0.5 ? w.amplitude : -w.amplitude;
  }

  // Value used for integrating over grid step [t_k, t_{k+1}] at an interior
  // stage time t: haar modes are constant on aligned steps, trig modes are
  // evaluated in closed form.
  [[nodiscard]] double value_in_step(std::size_t j, std::size_t k, double t) const {
    return kind_ == BasisKind::haar ? values_(j, k) : trig_value(j, t);
  }

  // Closed-form G_j(t) for 0 <= t <= T.
  [[nodiscard]] double antiderivative(std::size_t j, double t) const {
    check_mode(j);
    check_time(t);
    const double T = horizon();
    if (j == 0) return t / std::sqrt(T);
    if (kind_ == BasisKind::trig) {
      const double omega = static_cast<double>(j) * std::numbers::pi / T;
      return std::sqrt(2.0 / T) * std::sin(omega * t) / omega;
    }
    const auto w = haar_wavelet(j);
    const double a = w.start * w.width;
    const double m = a + 0.5 * w.width;
    const double b = a + w.width;
    if (t <= a || t >= b) return 0.0;
    if (t <= m) return w.amplitude * (t - a);
    return w.amplitude * (b - t);
  }

  // Exact int_{t0}^{t1} exp(-rate (t1 - s)) e_j(s) ds; rate >= 0.
  [[nodiscard]] double damped_integral(std::size_t j, double rate, double t0, double t1) const {
    check_mode(j);
    check_time(t0);
    check_time(t1);
    if (t1 <= t0) return 0.0;
    const double T = horizon();
    // int_{s0}^{s1} c exp(-rate (t1 - s)) ds
    auto piece = [&](double c, double s0, double s1) {
      s0 = std::max(s0, t0);
      s1 = std::min(s1, t1);
      if (s1 <= s0) return 0.0;
      if (rate == 0.0) return c * (s1 - s0);
      return c * std::exp(-rate * (t1 - s1)) * (-std::expm1(-rate * (s1 - s0))) / rate;
    };
    if (j == 0) return piece(1.0 / std::sqrt(T), 0.0, T);
    if (kind_ == BasisKind::haar) {
      const auto w = haar_wavelet(j);
      const double a = w.start * w.width;
      return piece(w.amplitude, a, a + 0.5 * w.width) +
             piece(-w.amplitude, a + 0.5 * w.width, a + w.width);
    }
    const double omega = static_cast<double>(j) * std::numbers::pi / T;
    const double amp = std::sqrt(2.0 / T);
    auto f = [&](double s) { return rate * std::cos(omega * s) + omega * std::sin(omega * s); };
    return amp * (f(t1) - std::exp(-rate * (t1 - t0)) * f(t0)) / (rate * rate + omega * omega);
  }

 private:
  struct Wavelet {
    double width;      // support length
    double start;      // shift s, in units of width
    double amplitude;  // 2^{l/2} / sqrt(T)
  };

  [[nodiscard]] Wavelet haar_wavelet(std::size_t j) const {
    const unsigned level = static_cast<unsigned>(std::bit_width(j) - 1);
    const std::size_t shift = j - (std::size_t{1} << level);
    const double scale = static_cast<double>(std::size_t{1} << level);
    return {horizon() / scale, static_cast<double>(shift), std::sqrt(scale / horizon())};
  }

  // Exact value at grid node k < n_steps using integer arithmetic so that
  // breakpoints never round to the wrong side.
  [[nodiscard]] double node_value(std::size_t j, std::size_t k) const {
    if (kind_ == BasisKind::trig) return trig_value(j, grid_.time(k));
    if (j == 0) return 1.0 / std::sqrt(horizon());
    const unsigned level = static_cast<unsigned>(std::bit_width(j) - 1);
    const std::uint64_t shift = j - (std::size_t{1} << level);
    const std::uint64_t n = grid_.n_steps();
    // position in half-cells: k * 2^{l+1} / n compared to 2s, 2s+1, 2s+2
    const std::uint64_t pos = static_cast<std::uint64_t>(k) << (level + 1);
    const double amp = std::sqrt(static_cast<double>(std::uint64_t{1} << level) / horizon());
    if (pos < 2 * shift * n || pos >= (2 * shift + 2) * n) return 0.0;
    return pos < (2 * shift + 1) * n ? amp : -amp;
  }

  [[nodiscard]] double trig_value(std::size_t j, double t) const {
    const double T = horizon();
    if (j == 0) return 1.0 / std::sqrt(T);
    return std::sqrt(2.0 / T) * std::cos(static_cast<double>(j) * std::numbers::pi * t / T);
  }

  void check_mode(std::size_t j) const {
    if (j >= size_) {
      throw Error(ErrorKind::parameter,
                  "basis mode " + std::to_string(j) + " out of range [0, " + std::to_string(size_) + ")");
    }
  }

  void check_time(double t) const {
    const double slack = 1e-12 * horizon();
    if (!(t >= -slack && t <= horizon() + slack)) {
      throw Error(ErrorKind::domain, "time " + std::to_string(t) + " outside [0, " +
                                         std::to_string(horizon()) + "]");
    }
  }

  BasisKind kind_;
  std::size_t size_;
  TimeGrid grid_;
  Matrix values_;
  Matrix running_;
};

inline BasisSet make_basis(BasisKind kind, std::size_t size, const TimeGrid& grid) {
  return {kind, size, grid};
}

inline double antiderivative_at(const BasisSet& basis, std::size_t j, double t) {
  return basis.antiderivative(j, t);
}

// Coefficients c_j of a series in a basis; one row per series.
struct TemporalCoefficients {
  Matrix coefficients;  // n_series x basis size
};

// Left-endpoint Riemann inner products c_j = dt * sum_{k<n} v(t_k) e_j(t_k).
// `values` holds one series per row with n_steps + 1 columns.
inline TemporalCoefficients project_time_series(const Eigen::Ref<const Matrix>& values,
                                                const BasisSet& basis) {
  const auto n = static_cast<Eigen::Index>(basis.grid().n_steps());
  if (values.cols() != n + 1) {
    throw Error(ErrorKind::shape, "time series has " + std::to_string(values.cols()) +
                                      " samples, grid needs " + std::to_string(n + 1));
  }
  const double dt = basis.grid().dt();
  Matrix c = dt * (values.leftCols(n) * basis.values().leftCols(n).transpose());
  return {std::move(c)};
}

inline TemporalCoefficients project_time_series(std::span<const double> values,
                                                const BasisSet& basis) {
  ConstMatrixMap row(values.data(), 1, static_cast<Eigen::Index>(values.size()));
  return project_time_series(Matrix(row), basis);
}

// v(t_k) = sum_j c_j e_j(t_k) on every node (left limit at T).
inline Matrix reconstruct_time_series(const TemporalCoefficients& coeffs, const BasisSet& basis) {
  if (static_cast<std::size_t>(coeffs.coefficients.cols()) != basis.size()) {
    throw Error(ErrorKind::shape, "coefficient count does not match basis size");
  }
  return coeffs.coefficients * basis.values();
}

// Debug export: rows are modes, columns are grid nodes.
inline void write_basis_csv(std::ostream& out, const BasisSet& basis, bool running_integrals = false) {
  const Matrix& table = running_integrals ? basis.running_integrals() : basis.values();
  out << "j";
  for (std::size_t k = 0; k < basis.grid().n_nodes(); ++k) out << ",t" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t j = 0; j < basis.size(); ++j) {
    out << j;
    for (Eigen::Index k = 0; k < table.cols(); ++k) out << ',' << table(j, k);
    out << '\n';
  }
}

}  // namespace wce
