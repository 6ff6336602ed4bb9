#pragma once

// Test-side reference computations. Nothing here calls the library's
// solvers; each oracle is an independent route to the same number.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

// Composite trapezoid on [a, b] with n panels.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  const double h = (b - a) / static_cast<double>(n);
  double s = 0.5 * (f(a) + f(b));
  for (std::size_t k = 1; k < n; ++k) s += f(a + h * static_cast<double>(k));
  return s * h;
}

// Haar system on [0, T], 0-based: e_0 = 1/sqrt(T), e_j for j = 2^n + k.
inline double haar(std::size_t j, double t, double T) {
  const double s = t / T;
  if (j == 0) return 1.0 / std::sqrt(T);
  std::size_t n = 0;
  while ((std::size_t{2} << n) <= j) ++n;
  const double k = static_cast<double>(j - (std::size_t{1} << n));
  const double scale = std::pow(2.0, static_cast<double>(n));
  const double lo = k / scale, mid = (k + 0.5) / scale, hi = (k + 1.0) / scale;
  const double amp = std::sqrt(scale / T);
  if (s >= lo && s < mid) return amp;
  if (s >= mid && s < hi) return -amp;
  return 0.0;
}

// Cosine system on [0, T]: e_0 = 1/sqrt(T), e_j = sqrt(2/T) cos(j pi t / T).
inline double trig(std::size_t j, double t, double T) {
  if (j == 0) return 1.0 / std::sqrt(T);
  return std::sqrt(2.0 / T) * std::cos(static_cast<double>(j) * std::numbers::pi * t / T);
}

// Scalar classical RK4 for y' = f(t, y).
inline std::vector<double> rk4(const std::function<double(double, double)>& f, double y0, double T, std::size_t n) {
  std::vector<double> y(n + 1);
  y[0] = y0;
  const double h = T / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = h * static_cast<double>(k);
    const double k1 = f(t, y[k]);
    const double k2 = f(t + 0.5 * h, y[k] + 0.5 * h * k1);
    const double k3 = f(t + 0.5 * h, y[k] + 0.5 * h * k2);
    const double k4 = f(t + h, y[k] + h * k3);
    y[k + 1] = y[k] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return y;
}

// int_0^t exp(-r (t - s)) g(s) ds by trapezoid.
inline double duhamel(const std::function<double(double)>& g, double r, double t, std::size_t n = 10000) {
  return trapezoid([&](double s) { return std::exp(-r * (t - s)) * g(s); }, 0.0, t, n);
}

inline double ou_mean(double x0, double theta, double mu, double t) { return mu + (x0 - mu) * std::exp(-theta * t); }
inline double ou_variance(double theta, double sigma, double t) {
  return sigma * sigma * (1.0 - std::exp(-2.0 * theta * t)) / (2.0 * theta);
}
inline double gbm_second_moment(double x0, double mu, double sigma, double t) {
  return x0 * x0 * std::exp((2.0 * mu + sigma * sigma) * t);
}

// Probabilists' Hermite by explicit formulas up to degree 4.
inline double hermite_explicit(unsigned k, double x) {
  switch (k) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return x * x - 1.0;
    case 3: return x * x * x - 3.0 * x;
    case 4: return x * x * x * x - 6.0 * x * x + 3.0;
  }
  return std::nan("");
}

}  // namespace oracle
