#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "wce/timebasis.hpp"

using namespace wce;
using Catch::Approx;

TEST_CASE("time grid resolves steps from dt") {
  const TimeGrid g = TimeGrid::from_step(1.0, 1e-3);
  CHECK(g.n_steps() == 1000);
  CHECK(g.time(1000) == 1.0);
  CHECK(g.prefix(250).horizon() == Approx(0.25));
  CHECK_THROWS_AS(TimeGrid(0.0, 4), Error);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), Error);
}

TEST_CASE("basis node values") {
  const TimeGrid g(1.0, 8);
  const BasisSet h1(BasisKind::haar, 1, g);
  for (std::size_t k = 0; k <= 8; ++k) {
    CHECK(h1.values()(0, k) == 1.0);
    CHECK(h1.running_integrals()(0, k) == Approx(g.time(k)));
  }
  const BasisSet h2(BasisKind::haar, 2, g);
  CHECK(std::abs(h2.antiderivative(1, 1.0)) < 1e-15);

  const BasisSet t3(BasisKind::trig, 3, TimeGrid(2.0, 16));
  CHECK(t3.value(1, 0.0) == Approx(1.0));
}

TEST_CASE("running integrals match quadrature") {
  const TimeGrid g(1.0, 64);
  const BasisSet h(BasisKind::haar, 8, g);
  CHECK(h.antiderivative(0, 0.5) == Approx(0.5));
  const double quad = oracle::trapezoid([](double s) { return oracle::haar(1, s, 1.0); }, 0.0, 0.5, 200000);
  CHECK(h.antiderivative(1, 0.5) == Approx(quad).margin(1e-5));
  CHECK(h.antiderivative(1, 0.5) == Approx(0.5));

  for (double T : {1.0, 2.5}) {
    const BasisSet tr(BasisKind::trig, 6, TimeGrid(T, 32));
    CHECK(std::abs(tr.antiderivative(1, T)) < 1e-14);
    for (std::size_t j = 0; j < 6; ++j) {
      for (double t : {0.1 * T, 0.37 * T, 0.9 * T}) {
        const double q = oracle::trapezoid([&](double s) { return oracle::trig(j, s, T); }, 0.0, t, 20000);
        CHECK(tr.antiderivative(j, t) == Approx(q).margin(1e-8));
      }
    }
  }
  for (std::size_t j = 0; j < 8; ++j) {
    for (double t : {0.2, 0.55, 0.8125}) {
      const double q = oracle::trapezoid([&](double s) { return oracle::haar(j, s, 1.0); }, 0.0, t, 400000);
      CHECK(h.antiderivative(j, t) == Approx(q).margin(1e-4));
    }
  }
}

TEST_CASE("haar node values agree with the oracle") {
  const TimeGrid g(2.0, 64);
  const BasisSet h(BasisKind::haar, 16, g);
  for (std::size_t j = 0; j < 16; ++j) {
    for (std::size_t k = 0; k < 64; ++k) CHECK(h.values()(j, k) == Approx(oracle::haar(j, g.time(k), 2.0)));
  }
}

TEST_CASE("damped integral matches Duhamel quadrature") {
  const TimeGrid g(1.0, 64);
  for (BasisKind kind : {BasisKind::haar, BasisKind::trig}) {
    const BasisSet b(kind, 8, g);
    for (std::size_t j = 0; j < 8; ++j) {
      for (double rate : {0.0, 0.7, 39.5}) {
        const double t = 0.8;
        auto e = [&](double s) { return kind == BasisKind::haar ? oracle::haar(j, s, 1.0) : oracle::trig(j, s, 1.0); };
        const double q = oracle::duhamel(e, rate, t, 400000);
        CHECK(b.damped_integral(j, rate, 0.0, t) == Approx(q).margin(2e-5));
      }
    }
  }
}

TEST_CASE("projection of constants, zeros and basis elements") {
  const TimeGrid g(1.0, 64);
  const BasisSet h(BasisKind::haar, 8, g);
  Matrix v = Matrix::Constant(1, 65, 2.5);
  auto c = project_time_series(v, h).coefficients;
  CHECK(c(0, 0) == Approx(2.5));
  for (Eigen::Index j = 1; j < 8; ++j) CHECK(std::abs(c(0, j)) < 1e-12);

  CHECK(project_time_series(Matrix::Zero(1, 65), h).coefficients.isZero(0.0));

  Matrix e2 = h.values().row(1);
  c = project_time_series(e2, h).coefficients;
  for (Eigen::Index j = 0; j < 8; ++j) CHECK(std::abs(c(0, j) - (j == 1 ? 1.0 : 0.0)) <= 1e-8);
}

TEST_CASE("round trip and Parseval in the haar span") {
  const TimeGrid g(1.0, 128);
  const BasisSet h(BasisKind::haar, 16, g);
  Matrix coeffs(1, 16);
  for (Eigen::Index j = 0; j < 16; ++j) coeffs(0, j) = std::sin(1.0 + static_cast<double>(j));
  const Matrix v = reconstruct_time_series({coeffs}, h);
  const auto back = project_time_series(v, h).coefficients;
  CHECK((back - coeffs).cwiseAbs().maxCoeff() <= 1e-10);
  const double energy = g.dt() * v.leftCols(128).squaredNorm();
  CHECK(std::abs(energy - coeffs.squaredNorm()) <= 1e-8);
}

TEST_CASE("Bessel inequality off the span") {
  const TimeGrid g(1.0, 256);
  for (BasisKind kind : {BasisKind::haar, BasisKind::trig}) {
    const BasisSet b(kind, 16, g);
    Matrix v(1, 257);
    for (std::size_t k = 0; k <= 256; ++k) v(0, static_cast<Eigen::Index>(k)) = std::exp(g.time(k)) * std::sin(7 * g.time(k));
    const auto c = project_time_series(v, b).coefficients;
    CHECK(g.dt() * v.leftCols(256).squaredNorm() >= c.squaredNorm() - 1e-12);
  }
}

TEST_CASE("projection error of sqrt(t) decreases with J") {
  const TimeGrid g(1.0, 1024);
  Matrix v(1, 1025);
  for (std::size_t k = 0; k <= 1024; ++k) v(0, static_cast<Eigen::Index>(k)) = std::sqrt(g.time(k));
  double prev = 1e300;
  for (std::size_t J : {4, 16, 64}) {
    const BasisSet b(BasisKind::haar, J, g);
    const Matrix r = reconstruct_time_series(project_time_series(v, b), b);
    const double err = std::sqrt(g.dt() * (r - v).leftCols(1024).squaredNorm());
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("trig Gram matrix approaches identity") {
  const TimeGrid g(1.0, 2048);
  const BasisSet b(BasisKind::trig, 8, g);
  const Matrix E = b.values().leftCols(2048);
  const Matrix gram = g.dt() * E * E.transpose();
  CHECK((gram - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("basis guards") {
  CHECK_THROWS_AS(BasisSet(BasisKind::haar, 3, TimeGrid(1.0, 12)), Error);
  CHECK_THROWS_AS(BasisSet(BasisKind::haar, 8, TimeGrid(1.0, 12)), Error);
  CHECK_THROWS_AS(BasisSet(BasisKind::trig, 0, TimeGrid(1.0, 12)), Error);
  const BasisSet b(BasisKind::trig, 4, TimeGrid(1.0, 8));
  CHECK_THROWS_AS(b.value(4, 0.1), Error);
  CHECK_THROWS_AS(b.antiderivative(0, 1.5), Error);
  CHECK_THROWS_AS(project_time_series(Matrix::Zero(1, 5), b), Error);
}
