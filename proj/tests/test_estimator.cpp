#include <catch_amalgamated.hpp>

#include <cmath>

#include "wce/estimator.hpp"

using namespace wce;

namespace {

WickFeatures ou_features(std::size_t np, std::size_t J, unsigned K, std::uint64_t seed, const TimeGrid& g, NoiseBatch* out = nullptr) {
  const BasisSet b(BasisKind::haar, J, g);
  NoiseBatch noise = simulate_brownian(np, 1, g, seed);
  auto f = wick_features(gaussian_coords(noise, b), index_set(1, J, K));
  if (out) *out = std::move(noise);
  return f;
}

}  // namespace

TEST_CASE("Monte Carlo projection of constant trajectories") {
  const TimeGrid g(1.0, 32);
  const auto f = ou_features(50, 4, 2, 1, g);
  Tensor3 y(50, 1, 33);
  for (std::size_t q = 0; q < y.size(); ++q) y.data()[q] = 2.5;
  FitConfig cfg;
  cfg.kind = EstimatorKind::mc_projection;
  const auto t = fit_propagators(y, f, g, cfg);
  for (std::size_t k = 0; k <= 32; ++k) CHECK(t.values(0, 0, k) == Catch::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("ridge recovers exact linear data") {
  const TimeGrid g(1.0, 32);
  const auto f = ou_features(300, 4, 2, 2, g);
  const Eigen::Index p = f.values.cols();
  Matrix u(p, 5);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) u(i, j) = std::sin(1.0 + static_cast<double>(3 * i + j));
  }
  const Matrix y = f.values * u;
  const Matrix got = ridge_solve(y, f.values, 0.0);
  CHECK((got - u).cwiseAbs().maxCoeff() <= 1e-8);
  const Matrix shrunk = ridge_solve(y, f.values, 1e12);
  CHECK(shrunk.cwiseAbs().maxCoeff() <= 1e-6 * u.cwiseAbs().maxCoeff());
}

TEST_CASE("ridge reports rank deficiency without regularization") {
  Matrix phi(10, 2);
  phi.col(0).setOnes();
  phi.col(1).setOnes();
  try {
    ridge_solve(Matrix::Ones(10, 1), phi, 0.0);
    FAIL("expected rank_deficient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::rank_deficient);
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }
  CHECK_NOTHROW(ridge_solve(Matrix::Ones(10, 1), phi, 1e-3));
  CHECK_THROWS_AS(ridge_solve(Matrix::Ones(9, 1), phi, 1e-3), Error);
}

TEST_CASE("fitted OU propagators approach the solved ones") {
  const double theta = 2.0, sigma = 0.5;
  const TimeGrid g(1.0, 256);
  NoiseBatch noise;
  const auto f = ou_features(5000, 8, 1, 7, g, &noise);
  for (double x0 : {0.0, 1.0}) {
    const auto model = AffineSdeModel::ornstein_uhlenbeck(x0, theta, 0.0, sigma);
    const auto y = simulate_em_sde(model, noise);
    const auto solved = solve_affine_propagators(model, BasisSet(BasisKind::haar, 8, g), f.set, g);
    auto gap = [&](EstimatorKind kind) {
      FitConfig cfg;
      cfg.kind = kind;
      const auto t = fit_propagators(y, f, g, cfg);
      double d = 0.0;
      for (std::size_t q = 0; q < t.values.size(); ++q) d = std::max(d, std::abs(t.values.data()[q] - solved.values.data()[q]));
      return d;
    };
    CHECK(gap(EstimatorKind::ridge) <= 0.05 * sigma / std::sqrt(theta));
    // The projection error scales with |X|; the band holds for a start at the mean.
    if (x0 == 0.0) CHECK(gap(EstimatorKind::mc_projection) <= 0.05 * sigma / std::sqrt(theta));
  }
}

TEST_CASE("training window truncates the fitted grid") {
  const TimeGrid g(1.0, 64);
  NoiseBatch noise;
  const auto f = ou_features(100, 4, 1, 3, g, &noise);
  const auto y = simulate_em_sde(AffineSdeModel::ornstein_uhlenbeck(1.0, 1.0, 0.0, 0.3), noise);
  FitConfig cfg;
  cfg.window_fraction = 0.5;
  const auto t = fit_propagators(y, f, g, cfg);
  CHECK(t.grid.n_steps() == 32);
  CHECK(t.values.dim(2) == 33);
  cfg.window_fraction = 0.0;
  CHECK_THROWS_AS(fit_propagators(y, f, g, cfg), Error);
}

TEST_CASE("temporal compression keeps smooth fits") {
  const TimeGrid g(1.0, 128);
  NoiseBatch noise;
  const auto f = ou_features(400, 4, 1, 9, g, &noise);
  const auto y = simulate_em_sde(AffineSdeModel::ornstein_uhlenbeck(1.0, 1.0, 0.0, 0.0), noise);
  FitConfig cfg;
  cfg.compression_modes = 16;
  const auto t = fit_propagators(y, f, g, cfg);
  Matrix series(1, 129);
  for (std::size_t k = 0; k <= 128; ++k) series(0, static_cast<Eigen::Index>(k)) = y(0, 0, k);
  const BasisSet trig(BasisKind::trig, 16, g);
  const Matrix smooth = reconstruct_time_series(project_time_series(series, trig), trig);
  for (std::size_t k = 0; k <= 128; ++k) CHECK(t.values(0, 0, k) == Catch::Approx(smooth(0, static_cast<Eigen::Index>(k))).margin(1e-8));
  for (std::size_t k = 32; k <= 96; k += 16) CHECK(t.values(0, 0, k) == Catch::Approx(std::exp(-g.time(k))).margin(0.02));
}

TEST_CASE("relative L2 identities") {
  Tensor3 x(3, 2, 4);
  for (std::size_t q = 0; q < x.size(); ++q) x.data()[q] = std::cos(static_cast<double>(q)) + 0.1;
  Tensor3 twice = x;
  for (std::size_t q = 0; q < x.size(); ++q) twice.data()[q] *= 2.0;
  CHECK(relative_l2(x, x) == 0.0);
  CHECK(relative_l2(Tensor3(3, 2, 4), x) == Catch::Approx(1.0));
  CHECK(relative_l2(twice, x) == Catch::Approx(1.0));
  try {
    relative_l2(x, Tensor3(3, 2, 4));
    FAIL("expected undefined_metric");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::undefined_metric);
  }
  CHECK_THROWS_AS(relative_l2(x, Tensor3(3, 2, 5)), Error);
}

TEST_CASE("dictionary extrapolation") {
  const TimeGrid full(2.0, 200);
  const TimeGrid window = full.prefix(100);
  const auto set = index_set(1, 2, 1);
  PropagatorTable t{set, window, Tensor3(set->size(), 1, 101)};
  for (std::size_t k = 0; k <= 100; ++k) {
    t.values(0, 0, k) = 1.5;
    t.values(1, 0, k) = std::exp(-2.0 * window.time(k));
    t.values(2, 0, k) = 1.0 - 0.5 * window.time(k) + 0.25 * window.time(k) * window.time(k);
  }
  const auto poly = extrapolate_propagators(t, TimeDictionary::polynomial(2), full);
  for (std::size_t k = 0; k <= 200; ++k) {
    const double s = full.time(k);
    CHECK(poly.values(0, 0, k) == Catch::Approx(1.5).margin(1e-10));
    CHECK(poly.values(2, 0, k) == Catch::Approx(1.0 - 0.5 * s + 0.25 * s * s).margin(1e-10));
  }
  const auto ex = extrapolate_propagators(t, TimeDictionary::exponentials({0.0, -2.0}), full);
  for (std::size_t k = 0; k <= 200; ++k) CHECK(ex.values(1, 0, k) == Catch::Approx(std::exp(-2.0 * full.time(k))).margin(1e-10));

  const TimeGrid fine(1.0, 1000);
  PropagatorTable tiny{set, fine.prefix(10), Tensor3(set->size(), 1, 11)};
  try {
    extrapolate_propagators(tiny, TimeDictionary::polynomial(3), fine);
    FAIL("expected conditioning error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conditioning);
  }
  CHECK_THROWS_AS(TimeDictionary::polynomial(4), Error);
}

TEST_CASE("sweep over time modes is deterministic and improves") {
  SweepSpec spec{AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.0, 0.5), TimeGrid(1.0, 256), BasisKind::haar, 16, 1, 0, 100, 0, PropagatorSource::solve, {}, {}};
  spec.seed = 11;
  const std::vector<double> values{4, 16, 64};
  const auto a = sensitivity_sweep(spec, SweepAxis::n_time_modes, values);
  const auto b = sensitivity_sweep(spec, SweepAxis::n_time_modes, values);
  REQUIRE(a.size() == 3);
  for (std::size_t q = 0; q < 3; ++q) CHECK(a[q].metric == b[q].metric);
  CHECK(a[1].metric < a[0].metric);
  CHECK(a[2].metric < a[1].metric);
  CHECK_THROWS_AS(sensitivity_sweep(spec, SweepAxis::n_time_modes, {16, 4}), Error);
  CHECK_THROWS_AS(sensitivity_sweep(spec, SweepAxis::n_time_modes, {2.5}), Error);
}
