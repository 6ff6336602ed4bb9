#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "wce/spde_propagator.hpp"

using namespace wce;

namespace {

HeatSpdeModel heat(double nu, std::size_t nx, std::vector<double> eigenvalues, std::vector<double> chi0) {
  HeatSpdeModel m;
  m.nu = nu;
  m.n_x = nx;
  m.chi0 = std::move(chi0);
  m.spectrum = QSpectrum(SpatialFamily::torus_fourier, nx, std::move(eigenvalues));
  return m;
}

double max_abs_degree_at_least(const CoefficientField& f, unsigned deg) {
  double m = 0.0;
  for (std::size_t q = 0; q < f.set->size(); ++q) {
    if ((*f.set)[q].degree() < deg) continue;
    for (double v : f.values.slice(q)) m = std::max(m, std::abs(v));
  }
  return m;
}

double state_at_end(std::size_t n_steps) {
  const TimeGrid g(0.5, n_steps);
  const BasisSet b(BasisKind::trig, 2, g);
  std::vector<double> chi(16);
  for (std::size_t i = 0; i < 16; ++i) chi[i] = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 16.0);
  const SemilinearSpdeModel m{heat(0.1, 16, {0.0}, chi), {0.0, 1.0, 0.0, -1.0}};
  const auto f = solve_semilinear_propagators(m, b, index_set(1, 2, 3), g, {8});
  return f.values(0, n_steps, 3);
}

}  // namespace

TEST_CASE("heat mean coefficient follows the semigroup") {
  const std::size_t nx = 32;
  const TimeGrid g(1.0, 256);
  const BasisSet b(BasisKind::haar, 8, g);
  const auto m = heat(0.1, nx, {0.01, 0.005, 0.005}, sine_initial_condition(nx, 1.5, 2));
  const auto f = solve_heat_propagators(m, b, index_set(3, 8, 2), g);
  double err = 0.0;
  for (std::size_t k = 0; k <= 256; ++k) {
    const double decay = std::exp(-0.1 * std::pow(4.0 * std::numbers::pi, 2) * g.time(k));
    for (std::size_t i = 0; i < nx; ++i) err = std::max(err, std::abs(f.values(0, k, i) - decay * m.chi0[i]));
  }
  CHECK(err <= 1e-6);
  CHECK(max_abs_degree_at_least(f, 2) <= 1e-12);
}

TEST_CASE("heat first-order coefficients match Duhamel quadrature") {
  const std::size_t nx = 16;
  const double T = 1.0, nu = 0.05;
  const TimeGrid g(T, 128);
  const TorusFourier fourier(nx);
  const std::vector<double> ev{0.04, 0.02, 0.02};
  for (BasisKind kind : {BasisKind::haar, BasisKind::trig}) {
    const BasisSet b(kind, 4, g);
    const auto set = index_set(3, 4, 1);
    const auto f = solve_heat_propagators(heat(nu, nx, ev, std::vector<double>(nx, 0.0)), b, set, g);
    for (std::size_t kl = 0; kl < 3; ++kl) {
      const double r = fourier.decay_rate(kl, nu);
      for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t q = *set->find(MultiIndex::unit(static_cast<std::uint32_t>(kl), static_cast<std::uint32_t>(j)));
        auto e = [&](double s) { return kind == BasisKind::haar ? oracle::haar(j, s, T) : oracle::trig(j, s, T); };
        for (std::size_t k : {32, 128}) {
          const double time_part = oracle::duhamel(e, r, g.time(k), 2000000);
          for (std::size_t i = 0; i < nx; i += 5) {
            CHECK(f.values(q, k, i) == Catch::Approx(std::sqrt(ev[kl]) * fourier.table()(kl, i) * time_part).margin(1e-6));
          }
        }
      }
    }
  }
}

TEST_CASE("semilinear without reaction reduces to the heat solver") {
  const std::size_t nx = 16;
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 4, g);
  const auto m = heat(0.2, nx, {0.02, 0.01}, sine_initial_condition(nx, 1.0, 1));
  const auto set = index_set(2, 4, 2);
  const auto h = solve_heat_propagators(m, b, set, g);
  const auto s = solve_semilinear_propagators({m, {0.0, 0.0}}, b, set, g);
  double d = 0.0;
  for (std::size_t q = 0; q < h.values.size(); ++q) d = std::max(d, std::abs(h.values.data()[q] - s.values.data()[q]));
  CHECK(d <= 1e-10);
}

TEST_CASE("semilinear without noise solves the pointwise ODE for flat data") {
  const std::size_t nx = 8;
  const TimeGrid g(1.0, 100);
  const BasisSet b(BasisKind::trig, 2, g);
  const SemilinearSpdeModel m{heat(0.3, nx, {0.0}, std::vector<double>(nx, 0.4)), {0.2, 1.0, 0.0, -1.0}};
  const auto f = solve_semilinear_propagators(m, b, index_set(1, 2, 3), g, {4});
  const auto ref = oracle::rk4([](double, double y) { return 0.2 + y - y * y * y; }, 0.4, 1.0, 800);
  for (std::size_t k = 0; k <= 100; ++k) {
    for (std::size_t i = 0; i < nx; ++i) CHECK(std::abs(f.values(0, k, i) - ref[8 * k]) <= 1e-6);
  }
  CHECK(max_abs_degree_at_least(f, 1) == 0.0);
}

TEST_CASE("Strang splitting is second order in time") {
  const double ref = state_at_end(2048);
  const double e1 = std::abs(state_at_end(16) - ref);
  const double e2 = std::abs(state_at_end(32) - ref);
  const double ratio = e1 / e2;
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("Phi4 reaction relaxes to its stable fixed point") {
  const std::size_t nx = 8;
  const TimeGrid g(5.0, 500);
  const BasisSet b(BasisKind::trig, 2, g);
  const SemilinearSpdeModel m{heat(1.0, nx, {0.0}, std::vector<double>(nx, 1.0)), {0.0, 3.0, 0.0, -1.0}};
  const auto f = solve_semilinear_propagators(m, b, index_set(1, 2, 3), g);
  for (std::size_t i = 0; i < nx; ++i) CHECK(f.values(0, 500, i) == Catch::Approx(std::sqrt(3.0)).margin(1e-6));
}

TEST_CASE("heat chaos variance matches the single-mode closed form") {
  const std::size_t nx = 16;
  const double nu = 0.1, lambda = 0.01;
  const TimeGrid g(1.0, 1024);
  const BasisSet b(BasisKind::haar, 64, g);
  const TorusFourier fourier(nx);
  const auto m = heat(nu, nx, {0.0, lambda}, std::vector<double>(nx, 0.0));
  const auto f = solve_heat_propagators(m, b, index_set(2, 64, 1), g);
  const double r = fourier.decay_rate(1, nu);
  for (std::size_t i = 1; i < nx; i += 3) {
    double var = 0.0;
    for (std::size_t q = 1; q < f.set->size(); ++q) var += f.values(q, 1024, i) * f.values(q, 1024, i);
    const double phi = fourier.table()(1, i);
    const double exact = lambda * phi * phi * (1.0 - std::exp(-2.0 * r)) / (2.0 * r);
    if (exact > 1e-6) CHECK(std::abs(var - exact) <= 0.02 * exact);
  }
}

TEST_CASE("heat realizations average to the mean coefficient") {
  const std::size_t nx = 16;
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 8, g);
  const auto m = heat(0.1, nx, {0.01, 0.01, 0.01}, sine_initial_condition(nx, 1.0, 1));
  const auto set = index_set(3, 8, 1);
  const auto f = solve_heat_propagators(m, b, set, g);
  const QField q = simulate_q_brownian(m.spectrum, g, 4000, 5);
  const Tensor3 x = reconstruct_field(f, wick_features(gaussian_coords(q.modes, b), set));
  for (std::size_t i = 0; i < nx; i += 4) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < 4000; ++p) {
      mean += x(p, 64, i);
      sq += x(p, 64, i) * x(p, 64, i);
    }
    mean /= 4000.0;
    const double sd = std::sqrt(sq / 4000.0 - mean * mean);
    CHECK(std::abs(mean - f.values(0, 64, i)) <= 4.0 * sd / std::sqrt(4000.0));
  }
}

TEST_CASE("spectral Euler-Maruyama without noise is the exact semigroup") {
  const std::size_t nx = 32;
  const TimeGrid g(1.0, 100);
  const auto m = heat(0.1, nx, {0.01}, sine_initial_condition(nx, 2.0, 1));
  const Tensor3 x = simulate_em_spde(m, Tensor3(2, 101, nx), g);
  for (std::size_t k = 0; k <= 100; k += 10) {
    const double decay = std::exp(-0.1 * std::pow(2.0 * std::numbers::pi, 2) * g.time(k));
    for (std::size_t i = 0; i < nx; ++i) CHECK(std::abs(x(1, k, i) - decay * m.chi0[i]) <= 1e-12);
  }
}

TEST_CASE("SPDE guards") {
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 4, g);
  CHECK_THROWS_AS(TorusFourier(12), Error);
  auto m = heat(0.1, 16, {0.01}, std::vector<double>(8, 0.0));
  CHECK_THROWS_AS(solve_heat_propagators(m, b, index_set(1, 4, 1), g), Error);
  m = heat(0.1, 16, {0.01}, std::vector<double>(16, 0.0));
  m.spectrum = QSpectrum(SpatialFamily::dirichlet_sine, 16, {0.01});
  CHECK_THROWS_AS(solve_heat_propagators(m, b, index_set(1, 4, 1), g), Error);
  m = heat(0.1, 16, {0.01}, std::vector<double>(16, 0.0));
  CHECK_THROWS_AS(solve_semilinear_propagators({m, {0.0, 0.0, 1.0}}, b, index_set(1, 4, 1), g), Error);
  CHECK_THROWS_AS(simulate_em_spde(m, Tensor3(1, 10, 16), g), Error);
}
