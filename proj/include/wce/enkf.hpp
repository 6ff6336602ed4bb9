#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "wce/error.hpp"
#include "wce/io.hpp"
#include "wce/parallel.hpp"
#include "wce/rng.hpp"
#include "wce/tensor.hpp"

namespace wce {

// Parameter ensemble Gamma: rows (theta, mu, sigma), one column per member.
struct Ensemble {
  Matrix members;  // 3 x ell

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(members.cols()); }
  [[nodiscard]] Eigen::Vector3d mean() const { return members.rowwise().mean(); }

  // Trace of the unbiased sample covariance.
  [[nodiscard]] double covariance_trace() const {
    const Eigen::Index ell = members.cols();
    if (ell < 2) return 0.0;
    const Eigen::Vector3d m = mean();
    double tr = 0.0;
    for (Eigen::Index r = 0; r < 3; ++r) tr += (members.row(r).array() - m(r)).square().sum();
    return tr / static_cast<double>(ell - 1);
  }
};

// Wiener increment used by the member forecast: the increments that drive
// the observed path (shared), an independent draw per (step, member), or none.
enum class ForecastNoise { shared, independent, none };

inline std::string_view to_string(ForecastNoise f) {
  switch (f) {
    case ForecastNoise::shared: return "shared";
    case ForecastNoise::independent: return "independent";
    case ForecastNoise::none: return "none";
  }
  return "shared";
}

inline ForecastNoise parse_forecast_noise(std::string_view s) {
  if (s == "shared") return ForecastNoise::shared;
  if (s == "independent") return ForecastNoise::independent;
  if (s == "none") return ForecastNoise::none;
  throw Error(ErrorKind::config, "unknown forecast noise '" + std::string(s) + "' (shared, independent, none)");
}

struct UniformPrior {
  double lo;
  double hi;
};

struct EnkfConfig {
  std::size_t ensemble_size = 250;
  std::array<UniformPrior, 3> priors{{{0.0, 5.0}, {-3.0, 3.0}, {0.0, 0.5}}};
  double r = 1e-3;
  std::size_t n_steps = 300;
  double dt = 0.01;
  std::uint64_t seed = 0;
  std::size_t tail = 5;
  ForecastNoise forecast_noise = ForecastNoise::independent;

  void validate() const {
    if (ensemble_size < 2) throw Error(ErrorKind::degenerate_ensemble, "ensemble needs at least 2 members");
    for (const auto& p : priors) {
      if (!(p.lo < p.hi)) throw Error(ErrorKind::config, "prior bounds must satisfy lo < hi");
    }
    if (!(r > 0.0)) throw Error(ErrorKind::config, "observation noise r must be positive");
    if (!(dt > 0.0)) throw Error(ErrorKind::config, "enkf dt must be positive");
    if (n_steps == 0) throw Error(ErrorKind::config, "enkf needs n_steps >= 1");
    if (tail == 0 || tail > n_steps) throw Error(ErrorKind::config, "averaging tail must lie in [1, n_steps]");
  }
};

inline Ensemble sample_prior(const EnkfConfig& cfg) {
  cfg.validate();
  Ensemble e{Matrix(3, static_cast<Eigen::Index>(cfg.ensemble_size))};
  for (std::size_t i = 0; i < cfg.ensemble_size; ++i) {
    for (std::size_t r = 0; r < 3; ++r) {
      const double u = rng::uniform(cfg.seed, rng::Stream::ensemble_prior, i, r, 0);
      e.members(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) =
          cfg.priors[r].lo + u * (cfg.priors[r].hi - cfg.priors[r].lo);
    }
  }
  return e;
}

struct StepOptions {
  double dt = 0.01;
  double r = 1e-3;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  ForecastNoise forecast_noise = ForecastNoise::independent;
  double shared_increment = 0.0;  // dW of the observed path at this step
};

// Member forecast x + theta (mu - x) dt + sigma dW_i.
inline Eigen::RowVectorXd enkf_forecast(const Ensemble& ens, double x_prev, const StepOptions& opt) {
  const Eigen::Index ell = ens.members.cols();
  Eigen::RowVectorXd xhat(ell);
  const double sdt = std::sqrt(opt.dt);
  for (Eigen::Index i = 0; i < ell; ++i) {
    const double theta = ens.members(0, i), mu = ens.members(1, i), sigma = ens.members(2, i);
    double dw = 0.0;
    if (opt.forecast_noise == ForecastNoise::shared) {
      dw = opt.shared_increment;
    } else if (opt.forecast_noise == ForecastNoise::independent) {
      dw = sdt * rng::normal(opt.seed, rng::Stream::ensemble_forecast, opt.step, static_cast<std::uint64_t>(i), 0);
    }
    xhat(i) = x_prev + theta * (mu - x_prev) * opt.dt + sigma * dw;
  }
  return xhat;
}

// Gamma <- Gamma + K (Y - Xhat), K = (A_z A_x^T)(A_x A_x^T + r)^{-1}.
inline Ensemble enkf_step(const Ensemble& ens, double observation, double x_prev, const StepOptions& opt) {
  const Eigen::Index ell = ens.members.cols();
  if (ell < 2) throw Error(ErrorKind::degenerate_ensemble, "enkf_step needs at least 2 members, got " + std::to_string(ell));
  const Eigen::RowVectorXd xhat = enkf_forecast(ens, x_prev, opt);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ell - 1));
  const Eigen::Vector3d zbar = ens.mean();
  const Eigen::MatrixXd Az = (ens.members.colwise() - zbar) * scale;
  const Eigen::RowVectorXd Ax = (xhat.array() - xhat.mean()).matrix() * scale;
  const Eigen::Vector3d pzx = Az * Ax.transpose();
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = Ax.squaredNorm() + opt.r;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success || !(s(0, 0) > 0.0)) {
    s(0, 0) += 1e-12;
    ldlt.compute(s);
  }
  const Eigen::Vector3d gain = ldlt.solve(Eigen::MatrixXd(pzx.transpose())).transpose();
  if (!gain.allFinite()) throw Error(ErrorKind::numerical, "non-finite Kalman gain at step " + std::to_string(opt.step));
  Ensemble out = ens;
  for (Eigen::Index i = 0; i < ell; ++i) out.members.col(i) += gain * (observation - xhat(i));
  return out;
}

// Wiener increments dW_k driving the observed path.
inline std::vector<double> observation_increments(double dt, std::size_t n_steps, std::uint64_t seed) {
  std::vector<double> dw(n_steps);
  const double sdt = std::sqrt(dt);
  for (std::size_t k = 0; k < n_steps; ++k) dw[k] = sdt * rng::normal(seed, rng::Stream::observation, k, 0, 0);
  return dw;
}

// Euler-Maruyama OU observations x_{k+1} = x_k + theta (mu - x_k) dt + sigma dW_k.
inline std::vector<double> simulate_ou_observations(double theta, double mu, double sigma, double x0, double dt,
                                                    std::size_t n_steps, std::uint64_t seed) {
  const auto dw = observation_increments(dt, n_steps, seed);
  std::vector<double> x(n_steps + 1);
  x[0] = x0;
  for (std::size_t k = 0; k < n_steps; ++k) x[k + 1] = x[k] + theta * (mu - x[k]) * dt + sigma * dw[k];
  return x;
}

struct EnkfResult {
  Matrix mean_trajectory;         // (n_steps + 1) x 3, row 0 is the prior mean
  std::vector<double> cov_trace;  // n_steps + 1
  Eigen::Vector3d estimate;       // tail-averaged ensemble mean
  bool cov_trace_monotone = true;
  Ensemble final_ensemble;
};

// Tolerance for the monotone flag: one part in 1e12 of the running trace
// absorbs summation rounding when an update barely moves the ensemble.
inline constexpr double kTraceRoundingSlack = 1e-12;

// `increments` are the observed path's dW_k; required for shared forecast noise.
inline EnkfResult run_enkf(const std::vector<double>& observations, const EnkfConfig& cfg,
                           const std::vector<double>& increments = {}) {
  cfg.validate();
  if (observations.size() < cfg.n_steps + 1) {
    throw Error(ErrorKind::shape, "enkf needs " + std::to_string(cfg.n_steps + 1) + " observations, got " +
                                      std::to_string(observations.size()));
  }
  if (cfg.forecast_noise == ForecastNoise::shared && increments.size() < cfg.n_steps) {
    throw Error(ErrorKind::shape, "shared forecast noise needs " + std::to_string(cfg.n_steps) +
                                      " observation increments, got " + std::to_string(increments.size()));
  }
  Ensemble ens = sample_prior(cfg);
  EnkfResult res;
  res.mean_trajectory = Matrix(static_cast<Eigen::Index>(cfg.n_steps + 1), 3);
  res.mean_trajectory.row(0) = ens.mean().transpose();
  res.cov_trace.push_back(ens.covariance_trace());
  for (std::size_t t = 0; t < cfg.n_steps; ++t) {
    const double dw = cfg.forecast_noise == ForecastNoise::shared ? increments[t] : 0.0;
    ens = enkf_step(ens, observations[t + 1], observations[t], {cfg.dt, cfg.r, cfg.seed, t, cfg.forecast_noise, dw});
    res.mean_trajectory.row(static_cast<Eigen::Index>(t + 1)) = ens.mean().transpose();
    const double tr = ens.covariance_trace();
    if (tr > res.cov_trace.back() * (1.0 + kTraceRoundingSlack)) res.cov_trace_monotone = false;
    res.cov_trace.push_back(tr);
  }
  res.estimate = res.mean_trajectory.bottomRows(static_cast<Eigen::Index>(cfg.tail)).colwise().mean().transpose();
  res.final_ensemble = std::move(ens);
  return res;
}

inline void write_enkf_csv(std::ostream& out, const EnkfResult& res) {
  CsvWriter csv(out, {"step", "mean_theta", "mean_mu", "mean_sigma", "cov_trace"});
  for (Eigen::Index t = 0; t < res.mean_trajectory.rows(); ++t) {
    csv << static_cast<std::size_t>(t) << res.mean_trajectory(t, 0) << res.mean_trajectory(t, 1)
        << res.mean_trajectory(t, 2) << res.cov_trace[static_cast<std::size_t>(t)];
    csv.end_row();
  }
}

}  // namespace wce
