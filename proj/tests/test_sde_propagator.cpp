#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "wce/estimator.hpp"
#include "wce/sde_propagator.hpp"

using namespace wce;

namespace {

double max_abs_degree_at_least(const PropagatorTable& t, unsigned deg) {
  double m = 0.0;
  for (std::size_t q = 0; q < t.set->size(); ++q) {
    if ((*t.set)[q].degree() < deg) continue;
    for (double v : t.values.slice(q)) m = std::max(m, std::abs(v));
  }
  return m;
}

}  // namespace

TEST_CASE("OU mean propagator decays exponentially") {
  const TimeGrid g(1.0, 1000);
  const BasisSet b(BasisKind::haar, 8, g);
  const auto model = AffineSdeModel::ornstein_uhlenbeck(1.3, 2.0, 0.0, 0.5);
  const auto t = solve_affine_propagators(model, b, index_set(1, 8, 1), g);
  double err = 0.0;
  for (std::size_t k = 0; k <= 1000; ++k) err = std::max(err, std::abs(t.values(0, 0, k) - 1.3 * std::exp(-2.0 * g.time(k))));
  CHECK(err <= 1e-8);
  CHECK(t.values(0, 0, 0) == 1.3);
  for (std::size_t q = 1; q < t.set->size(); ++q) CHECK(t.values(q, 0, 0) == 0.0);
}

TEST_CASE("OU first-order propagator matches Duhamel quadrature") {
  const double T = 2.0, theta = 1.5, sigma = 0.4;
  const TimeGrid g(T, 512);
  for (BasisKind kind : {BasisKind::haar, BasisKind::trig}) {
    const BasisSet b(kind, 4, g);
    const auto t = solve_affine_propagators(AffineSdeModel::ornstein_uhlenbeck(0.0, theta, 0.0, sigma), b, index_set(1, 4, 1), g);
    for (std::size_t k : {64, 200, 512}) {
      const double tk = g.time(k);
      CHECK(t.values(1, 0, k) == Catch::Approx(sigma / std::sqrt(T) * (1.0 - std::exp(-theta * tk)) / theta).margin(1e-6));
      for (std::size_t j = 1; j < 4; ++j) {
        auto e = [&](double s) { return kind == BasisKind::haar ? oracle::haar(j, s, T) : oracle::trig(j, s, T); };
        CHECK(t.values(1 + j, 0, k) == Catch::Approx(sigma * oracle::duhamel(e, theta, tk, 2000000)).margin(1e-6));
      }
    }
  }
}

TEST_CASE("OU higher chaos vanishes") {
  const TimeGrid g(1.0, 256);
  const BasisSet b(BasisKind::haar, 4, g);
  const auto t = solve_affine_propagators(AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.3, 0.5), b, index_set(1, 4, 3), g);
  CHECK(max_abs_degree_at_least(t, 2) <= 1e-12);
}

TEST_CASE("OU variance identity") {
  const TimeGrid g(1.0, 1024);
  const BasisSet b(BasisKind::haar, 64, g);
  const auto t = solve_affine_propagators(AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.0, 0.5), b, index_set(1, 64, 1), g);
  double var = 0.0;
  for (std::size_t q = 1; q < t.set->size(); ++q) var += t.values(q, 0, 1024) * t.values(q, 0, 1024);
  const double exact = oracle::ou_variance(2.0, 0.5, 1.0);
  CHECK(std::abs(var - exact) <= 0.02 * exact);
}

TEST_CASE("wick drift with P = 1 reduces to the affine solver") {
  const TimeGrid g(1.0, 128);
  const BasisSet b(BasisKind::trig, 3, g);
  const auto set = index_set(1, 3, 2);
  const auto affine = solve_affine_propagators({0.7, 0.4, -1.2, 0.3, 0.0}, b, set, g);
  const auto wick = solve_wick_drift_propagators({0.7, {0.4, -1.2}, 0.3}, b, set, g);
  double d = 0.0;
  for (std::size_t q = 0; q < affine.values.size(); ++q) d = std::max(d, std::abs(affine.values.data()[q] - wick.values.data()[q]));
  CHECK(d <= 1e-10);
}

TEST_CASE("wick drift without noise solves the deterministic ODE") {
  const TimeGrid g(1.0, 200);
  const BasisSet b(BasisKind::trig, 2, g);
  const std::vector<double> a{0.5, -1.0, -0.2};
  const auto t = solve_wick_drift_propagators({0.3, a, 0.0}, b, index_set(1, 2, 2), g, {4});
  const auto ref = oracle::rk4([&](double, double y) { return a[0] + a[1] * y + a[2] * y * y; }, 0.3, 1.0, 1600);
  for (std::size_t k = 0; k <= 200; ++k) CHECK(std::abs(t.values(0, 0, k) - ref[8 * k]) <= 1e-8);
  CHECK(max_abs_degree_at_least(t, 1) == 0.0);
}

TEST_CASE("wick drift with zero drift integrates the forcing") {
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 8, g);
  const auto t = solve_wick_drift_propagators({0.0, {0.0, 0.0}, 0.7}, b, index_set(1, 8, 1), g);
  for (std::size_t j = 0; j < 8; ++j) {
    for (std::size_t k = 0; k <= 64; ++k) CHECK(t.values(1 + j, 0, k) == Catch::Approx(0.7 * b.running_integrals()(j, k)).margin(1e-13));
  }
  CHECK_THROWS_AS(solve_wick_drift_propagators({0.0, {0, 0, 0, 1}, 0.1}, b, index_set(1, 8, 2), g), Error);
}

TEST_CASE("reconstruction identities") {
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 8, g);
  const auto model = AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.0, 0.5);
  const auto noise = simulate_brownian(6, 1, g, 3);
  const auto coords = gaussian_coords(noise, b);

  const auto zero_set = index_set(1, 8, 0);
  const auto mean = solve_affine_propagators(model, b, zero_set, g);
  const auto paths = reconstruct_paths(mean, wick_features(coords, zero_set));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k <= 64; ++k) CHECK(paths(i, 0, k) == mean.values(0, 0, k));
  }

  const auto set = index_set(1, 8, 2);
  const auto t = solve_affine_propagators(model, b, set, g);
  auto f = wick_features(coords, set);
  const Tensor3 base = reconstruct_paths(t, f);
  f.values.rightCols(f.values.cols() - 1) *= 3.0;
  const Tensor3 scaled = reconstruct_paths(t, f);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k <= 64; ++k) {
      CHECK(scaled(i, 0, k) - t.values(0, 0, k) == Catch::Approx(3.0 * (base(i, 0, k) - t.values(0, 0, k))).margin(1e-12));
    }
  }
}

TEST_CASE("OU chaos paths track Euler-Maruyama on shared increments") {
  const TimeGrid g(1.0, 1024);
  const BasisSet b(BasisKind::haar, 64, g);
  const auto model = AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.0, 0.5);
  const auto set = index_set(1, 64, 1);
  const auto noise = simulate_brownian(200, 1, g, 2024);
  const auto rec = reconstruct_paths(solve_affine_propagators(model, b, set, g), wick_features(gaussian_coords(noise, b), set));
  CHECK(relative_l2(rec, simulate_em_sde(model, noise)) <= 0.05);
}

TEST_CASE("Euler-Maruyama without noise") {
  const TimeGrid g(1.0, 1000);
  const auto noise = NoiseBatch::from_increments(g, 0, Tensor3(1, 1, 1000));
  const double dt = g.dt();
  const auto ou = simulate_em_sde(AffineSdeModel::ornstein_uhlenbeck(2.0, 2.0, 0.0, 0.5), noise);
  const auto gbm = simulate_em_sde(AffineSdeModel::geometric_bm(2.0, 0.05, 0.2), noise);
  for (std::size_t k = 0; k <= 1000; ++k) {
    CHECK(std::abs(ou(0, 0, k) - 2.0 * std::exp(-2.0 * g.time(k))) <= 2.0 * 4.0 * 2.0 * dt * 1.0);
    CHECK(std::abs(gbm(0, 0, k) - 2.0 * std::exp(0.05 * g.time(k))) <= 2.0 * 0.05 * 0.05 * 2.0 * dt * 1.0 + 1e-12);
  }
}

TEST_CASE("Heston with frozen variance") {
  const TimeGrid g(1.0, 100);
  HestonModel h;
  h.kappa = 0.0;
  h.zeta = 0.0;
  h.rho = 1.0;
  const auto s = simulate_brownian(4, 1, g, 1);
  Tensor3 inc(4, 2, 100);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 100; ++k) inc(i, 0, k) = inc(i, 1, k) = s.increments(i, 0, k);
  }
  const auto x = simulate_em_sde(h, NoiseBatch::from_increments(g, 0, inc));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k <= 100; ++k) CHECK(x(i, 1, k) == h.v0);
  }
  HestonModel bad;
  bad.rho = 2.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("GBM second moment converges in chaos order") {
  const TimeGrid g(1.0, 256);
  const BasisSet b(BasisKind::haar, 4, g);
  const auto model = AffineSdeModel::geometric_bm(1.0, 0.05, 0.2);
  const double exact = oracle::gbm_second_moment(1.0, 0.05, 0.2, 1.0);
  double prev = 1e300;
  for (unsigned K : {1u, 2u, 4u}) {
    const auto t = solve_affine_propagators(model, b, index_set(1, 4, K), g);
    double m2 = 0.0;
    for (std::size_t q = 0; q < t.set->size(); ++q) m2 += t.values(q, 0, 256) * t.values(q, 0, 256);
    const double gap = std::abs(m2 - exact) / exact;
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev <= 0.05);

  const auto t = solve_affine_propagators(model, b, index_set(1, 4, 4), g);
  std::vector<double> by_degree(5, 0.0);
  for (std::size_t q = 0; q < t.set->size(); ++q) {
    for (std::size_t k = 0; k <= 256; ++k) {
      by_degree[(*t.set)[q].degree()] = std::max(by_degree[(*t.set)[q].degree()], std::abs(t.values(q, 0, k)));
    }
  }
  for (unsigned d = 2; d <= 4; ++d) CHECK(by_degree[d] < by_degree[d - 1]);
}

TEST_CASE("solution does not depend on the order within a degree") {
  const TimeGrid g(1.0, 128);
  const BasisSet b(BasisKind::trig, 3, g);
  const auto set = index_set(1, 3, 3);
  std::vector<MultiIndex> shuffled;
  for (unsigned d = 0; d <= 3; ++d) {
    auto block = set->degree_block(d);
    std::reverse(block.begin(), block.end());
    for (auto q : block) shuffled.push_back((*set)[q]);
  }
  const auto other = ChaosIndexSet::from_list(1, 3, 3, shuffled);
  const AffineSdeModel model{1.0, 0.1, 0.05, 0.1, 0.2};
  const auto a = solve_affine_propagators(model, b, set, g);
  const auto c = solve_affine_propagators(model, b, other, g);
  double d = 0.0;
  for (std::size_t q = 0; q < set->size(); ++q) {
    const std::size_t r = *other->find((*set)[q]);
    for (std::size_t k = 0; k <= 128; ++k) d = std::max(d, std::abs(a.values(q, 0, k) - c.values(r, 0, k)));
  }
  CHECK(d <= 1e-12);
}

TEST_CASE("solver guards") {
  const TimeGrid g(1.0, 64);
  const BasisSet b(BasisKind::haar, 4, g);
  const auto model = AffineSdeModel::ornstein_uhlenbeck(1.0, 2.0, 0.0, 0.5);
  CHECK_THROWS_AS(solve_affine_propagators(model, b, index_set(2, 4, 1), g), Error);
  CHECK_THROWS_AS(solve_affine_propagators(model, b, index_set(1, 8, 1), g), Error);
  const auto open = ChaosIndexSet::from_list(1, 4, 2, {MultiIndex(), MultiIndex::unit(0, 1, 2)});
  CHECK_THROWS_AS(solve_affine_propagators(model, b, open, g), Error);
  CHECK_THROWS_AS(solve_affine_propagators(model, b, index_set(1, 4, 1), TimeGrid(1.0, 128)), Error);
  const AffineSdeModel explosive{1.0, 0.0, 800.0, 0.0, 0.0};
  try {
    solve_affine_propagators(explosive, b, index_set(1, 4, 1), g);
    FAIL("expected a numerical error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
  }
}
