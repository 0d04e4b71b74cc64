#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "fracspde/fields.hpp"

namespace fracspde {

/// User-facing prior hyperparameters.
struct PriorInputs {
  double C_rho = 10.0;      ///< prior median of the range
  double C_sigma = 1.0;     ///< prior median of the marginal standard deviation
  double C_a = 4.0;         ///< P(a > C_a) = 0.05
  double C_nu = 1.0;        ///< prior mean of nu
  double C_nu_hpd = 1.8;    ///< width of the 95% HPD interval of nu
  double nu_max = 2.0;
  double C_sigma_n = std::sqrt(0.1);  ///< prior median of the noise standard deviation
  double C_ns_rho = 10.0;
  double C_ns_sigma = 10.0;
  double C_ns_v = 10.0;
};

/// Inputs plus every derived quantity.
struct PriorConfig {
  PriorInputs in;
  double lambda_rho = 0.0;
  double lambda_sigma = 0.0;
  double lambda_sigma_n = 0.0;
  double sigma_v = 0.0;
  double p = 1.0, q = 1.0;
  /// Penalties (kappa, sigma, vx, vy); vx and vy share one value.
  std::array<double, 4> tau{1.0, 1.0, 1.0, 1.0};
  double tau_beta = 1e-6;
};

/// Median conditions for range, sigma and noise; P(a > C_a) = 0.05 for
/// sigma_v; beta shapes (p, q) from mean and HPD width. Penalties are left at
/// 1 (see calibrate_penalty).
PriorConfig derive_hyper(const PriorInputs& in);

/// Width of the shortest interval holding `mass` of Beta(p, q) on (0, 1).
double beta_hpd_width(double p, double q, double mass = 0.95);

/// Log-densities on natural scales. Templated so the same code runs on plain
/// doubles and on tape variables.
template <class T>
T log_prior_range(const T& rho, const PriorConfig& c) {
  using std::log;
  return std::log(c.lambda_rho) - 2.0 * log(rho) - c.lambda_rho / rho;
}

template <class T>
T log_prior_sigma(const T& sigma, const PriorConfig& c) {
  return std::log(c.lambda_sigma) - c.lambda_sigma * sigma;
}

template <class T>
T log_prior_sigma_n(const T& sigma_n, const PriorConfig& c) {
  return std::log(c.lambda_sigma_n) - c.lambda_sigma_n * sigma_n;
}

/// Bivariate N(0, sigma_v^2 I) on (vx0, vy0); equivalent to the density of
/// a = exp|v| with a uniform angle.
template <class T>
T log_prior_v(const T& vx, const T& vy, const PriorConfig& c) {
  const double s2 = c.sigma_v * c.sigma_v;
  return (vx * vx + vy * vy) * (-0.5 / s2) - std::log(2.0 * std::numbers::pi * s2);
}

/// Beta(p, q) on (0, nu_max).
template <class T>
T log_prior_nu(const T& nu, const PriorConfig& c) {
  using std::log;
  const double lbeta = std::lgamma(c.p) + std::lgamma(c.q) - std::lgamma(c.p + c.q);
  const T u = nu * (1.0 / c.in.nu_max);
  return (c.p - 1.0) * log(u) + (c.q - 1.0) * log(1.0 - u) - lbeta - std::log(c.in.nu_max);
}

/// Stationary parameters on natural scales.
struct StationaryTheta {
  double kappa0 = 1.0, sigma0 = 1.0, vx0 = 0.0, vy0 = 0.0, nu = 1.0;
  double sigma_n = 1.0;
};

/// Sum of the range, sigma, anisotropy, smoothness (when `with_nu`) and noise
/// log-densities. nu outside (0, nu_max) gives -infinity.
double log_prior_stationary(const StationaryTheta& theta, const PriorConfig& c,
                            bool with_nu = true);

/// Diagonal of Q_NS: [(pi k / A)^2 + (pi l / B)^2]^2 in basis order.
Vector spectral_precision(const BasisSpec& spec);

/// Gaussian log-density of alpha ~ N(0, tau^{-1} Q_NS^{-1}).
double log_prior_alpha(const Vector& alpha, const Vector& q_ns, double tau);

struct SpectralPenalty {
  Vector q_ns;
  std::array<double, 4> tau{1.0, 1.0, 1.0, 1.0};
};

/// Sum over the four coefficient fields; empty vectors contribute nothing.
double log_prior_nonstationary(const FieldParams& params, const SpectralPenalty& penalty);

enum class PenaltyTarget { Range, Sigma, Anisotropy };

struct CalibrationOptions {
  int grid = 25;
  int n_mc = 2000;
  double log_tau_lo = -20.0;
  double log_tau_hi = 20.0;
};

/// Monte-Carlo estimate of P(max over the grid of the log-ratio statistic
/// exceeds log C_NS) for a given tau.
double exceedance_probability(PenaltyTarget target, double c_ns, double tau,
                              const BasisSpec& spec, int grid, int n_mc, std::mt19937_64& rng);

/// Smallest tau (bisection on log tau) whose exceedance probability is at
/// most 0.05, using common random numbers across tau values.
double calibrate_penalty(PenaltyTarget target, double c_ns, const BasisSpec& spec,
                         std::mt19937_64& rng, const CalibrationOptions& opts = {});

}  // namespace fracspde
