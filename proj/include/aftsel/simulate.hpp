#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftsel/rng.hpp"
#include "aftsel/types.hpp"

namespace aftsel {

enum class ErrorDist { StdNormal, NormalMixture, StudentT3 };
enum class CovarianceKind { Identity, AR1, CompoundSymmetry };

inline double error_variance(ErrorDist d) {
  switch (d) {
    case ErrorDist::StdNormal: return 1.0;
    case ErrorDist::NormalMixture: return 0.9 * 1.0 + 0.1 * 225.0;  // 23.4
    case ErrorDist::StudentT3: return 3.0;
  }
  return 1.0;
}

inline std::string error_dist_name(ErrorDist d) {
  switch (d) {
    case ErrorDist::StdNormal: return "normal";
    case ErrorDist::NormalMixture: return "mixture";
    case ErrorDist::StudentT3: return "t3";
  }
  return "?";
}

struct ScenarioConfig {
  int n_train = 200;
  int n_val = 100;
  int n_test = 200;
  int p = 40;
  double alpha_true = 1.0;
  Vector beta_true;
  ErrorDist error_dist = ErrorDist::StdNormal;
  double snr = 5.0;
  double censor_rate = 0.30;
  CovarianceKind covariance = CovarianceKind::Identity;
  double rho = 0.5;
  std::vector<int> groups;

  static Vector default_beta() {
    Vector b = Vector::Zero(40);
    const double head[8] = {3.0, 1.5, 2.0, 2.0, 1.0, 2.0, 1.5, 1.0};
    for (int j = 0; j < 8; ++j) b[j] = head[j];
    return b;
  }

  // the grouped scenario: p = 30, six groups of five, two signal groups
  static ScenarioConfig sgl_scenario(CovarianceKind cov) {
    ScenarioConfig c;
    c.p = 30;
    c.beta_true = Vector::Zero(30);
    const double g1[5] = {1.0, 1.5, 2.0, 2.5, 3.0};
    const double g4[5] = {1.0, -1.0, 1.0, -1.0, 1.0};
    for (int j = 0; j < 5; ++j) {
      c.beta_true[j] = g1[j];
      c.beta_true[15 + j] = g4[j];
    }
    c.covariance = cov;
    c.groups.resize(30);
    for (int j = 0; j < 30; ++j) c.groups[static_cast<std::size_t>(j)] = j / 5;
    return c;
  }

  void validate() const {
    if (n_train < 4 || n_val < 2 || n_test < 2) throw std::invalid_argument("scenario: sizes too small");
    if (p < 0 || beta_true.size() != p) throw std::invalid_argument("scenario: beta_true length != p");
    if (!(snr > 0)) throw std::invalid_argument("scenario: snr must be positive");
    if (!(censor_rate > 0.0 && censor_rate < 1.0))
      throw std::invalid_argument("scenario: censor_rate must lie in (0,1)");
    if (!groups.empty() && static_cast<Index>(groups.size()) != p)
      throw std::invalid_argument("scenario: group labels must cover every feature");
  }
};

// sigma with beta' beta / (sigma^2 Var(eps)) = snr
inline double calibrate_sigma(const Vector& beta_true, ErrorDist dist, double snr) {
  if (!(snr > 0)) throw std::invalid_argument("calibrate_sigma: snr must be positive");
  return std::sqrt(beta_true.squaredNorm() / (snr * error_variance(dist)));
}

inline double draw_error(Rng& rng, ErrorDist dist) {
  switch (dist) {
    case ErrorDist::StdNormal: return rng.normal();
    case ErrorDist::NormalMixture: return rng.bernoulli(0.1) ? 15.0 * rng.normal() : rng.normal();
    case ErrorDist::StudentT3: return rng.student_t3();
  }
  return 0.0;
}

inline Matrix covariance_cholesky(const ScenarioConfig& cfg) {
  const Index p = cfg.p;
  if (cfg.covariance == CovarianceKind::Identity || p == 0) return Matrix::Identity(p, p);
  Matrix sigma(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j)
      sigma(i, j) = cfg.covariance == CovarianceKind::AR1
                        ? std::pow(cfg.rho, std::abs(static_cast<double>(i - j)))
                        : (i == j ? 1.0 : cfg.rho);
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance not positive definite");
  return llt.matrixL();
}

struct CensorBounds {
  double a = 0.0;
  double b = 0.0;
  bool none = false;  // censor_rate target of exactly 0 disables censoring
};

inline constexpr std::uint64_t kCalibrationSeed = 0xaf75e1u;

// Draw a pilot sample of latent log-times, fix a at (1st percentile - 1 sd),
// then bisect b until the pilot censoring fraction P(T > C), C ~ U(a,b),
// is within +-0.005 of the target. The pilot pairs (T_i, U_i) are drawn once
// so the rate is monotone in b and bisection is exact up to MC granularity.
inline CensorBounds calibrate_censoring_from_pilot(std::vector<double> t_pilot, double target,
                                                   std::uint64_t seed, double tol = 0.005) {
  if (!(target > 0.0 && target < 1.0))
    throw std::invalid_argument("calibrate_censoring: target rate must lie in (0,1)");
  const std::size_t m = t_pilot.size();
  Rng rng(seed);
  std::vector<double> u(m);
  for (std::size_t i = 0; i < m; ++i) u[i] = rng.uniform01();

  std::vector<double> sorted = t_pilot;
  std::sort(sorted.begin(), sorted.end());
  const double q01 = sorted[static_cast<std::size_t>(0.01 * static_cast<double>(m - 1))];
  double mean = 0.0, sq = 0.0;
  for (double v : t_pilot) mean += v;
  mean /= static_cast<double>(m);
  for (double v : t_pilot) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(m - 1));
  const double a = q01 - sd;

  auto rate = [&](double b) {
    std::size_t censored = 0;
    for (std::size_t i = 0; i < m; ++i)
      if (t_pilot[i] > a + u[i] * (b - a)) ++censored;
    return static_cast<double>(censored) / static_cast<double>(m);
  };

  double hi = sorted.back() + sd;
  double lo = a + 1e-9 * (1.0 + std::abs(a));
  const double lo_rate = rate(lo);
  double hi_rate = rate(hi);
  for (int it = 0; it < 200 && hi_rate > target; ++it) hi = a + 2.0 * (hi - a), hi_rate = rate(hi);
  if (lo_rate < target - tol || hi_rate > target + tol)
    throw std::runtime_error("calibrate_censoring: target " + std::to_string(target) +
                             " outside achievable range [" + std::to_string(hi_rate) + ", " +
                             std::to_string(lo_rate) + "]");
  double b = hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rate(mid);
    if (std::abs(r - target) <= tol) {
      b = mid;
      break;
    }
    (r > target ? lo : hi) = mid;
    b = mid;
  }
  return {a, b, false};
}

inline CensorBounds calibrate_censoring(const ScenarioConfig& cfg, double sigma, double target,
                                        int pilot_size = 100000,
                                        std::uint64_t seed = kCalibrationSeed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<double> t(static_cast<std::size_t>(pilot_size));
  Vector z(cfg.p), row(cfg.p);
  const Matrix chol = covariance_cholesky(cfg);
  const bool identity = cfg.covariance == CovarianceKind::Identity;
  for (int i = 0; i < pilot_size; ++i) {
    for (Index j = 0; j < cfg.p; ++j) z[j] = rng.normal();
    if (identity) row = z;
    else row.noalias() = chol * z;
    t[static_cast<std::size_t>(i)] =
        cfg.alpha_true + row.dot(cfg.beta_true) + sigma * draw_error(rng, cfg.error_dist);
  }
  return calibrate_censoring_from_pilot(std::move(t), target, seed + 1);
}

struct CalibratedScenario {
  ScenarioConfig config;
  double sigma = 1.0;
  CensorBounds censor;
};

inline CalibratedScenario calibrate(const ScenarioConfig& cfg,
                                    std::uint64_t seed = kCalibrationSeed) {
  cfg.validate();
  CalibratedScenario cal;
  cal.config = cfg;
  cal.sigma = calibrate_sigma(cfg.beta_true, cfg.error_dist, cfg.snr);
  cal.censor = calibrate_censoring(cfg, cal.sigma, cfg.censor_rate, 100000, seed);
  return cal;
}

struct GeneratedData {
  SurvivalDataset train, val, test;
};

namespace detail {

inline SurvivalDataset draw_split(Rng& rng, const CalibratedScenario& cal, int n, const Matrix& chol) {
  const ScenarioConfig& cfg = cal.config;
  SurvivalDataset d;
  d.y.resize(n);
  d.delta.resize(n);
  d.t_true.resize(n);
  d.x.resize(n, cfg.p);
  d.groups = cfg.groups;
  Vector z(cfg.p);
  const bool identity = cfg.covariance == CovarianceKind::Identity;
  for (int i = 0; i < n; ++i) {
    for (Index j = 0; j < cfg.p; ++j) z[j] = rng.normal();
    if (identity) d.x.row(i) = z.transpose();
    else d.x.row(i) = (chol * z).transpose();
    const double t = cfg.alpha_true + d.x.row(i).dot(cfg.beta_true) +
                     cal.sigma * draw_error(rng, cfg.error_dist);
    d.t_true[i] = t;
    if (cal.censor.none) {
      d.y[i] = t;
      d.delta[i] = 1;
    } else {
      const double c = rng.uniform(cal.censor.a, cal.censor.b);
      d.y[i] = std::min(t, c);
      d.delta[i] = t <= c ? 1 : 0;
    }
  }
  return d;
}

}  // namespace detail

inline GeneratedData generate(const CalibratedScenario& cal, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix chol = covariance_cholesky(cal.config);
  GeneratedData g;
  g.train = detail::draw_split(rng, cal, cal.config.n_train, chol);
  g.val = detail::draw_split(rng, cal, cal.config.n_val, chol);
  g.test = detail::draw_split(rng, cal, cal.config.n_test, chol);
  return g;
}

inline GeneratedData generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  return generate(calibrate(cfg), seed);
}

}  // namespace aftsel
