#include "fracspde/priors.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fracspde {

double beta_hpd_width(double p, double q, double mass) {
  using boost::math::ibeta;
  using boost::math::ibeta_inv;
  const double l_hi = ibeta_inv(p, q, 1.0 - mass);
  auto width = [&](double l) {
    const double upper = std::min(1.0, ibeta(p, q, l) + mass);
    return (upper >= 1.0 ? 1.0 : ibeta_inv(p, q, upper)) - l;
  };
  // Golden-section search for the shortest interval.
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = l_hi;
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = width(x1), f2 = width(x2);
  for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = width(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = width(x2);
    }
  }
  return std::min({f1, f2, width(0.0), width(l_hi)});
}

PriorConfig derive_hyper(const PriorInputs& in) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw std::invalid_argument(std::string("prior hyperparameter ") + name + " must be positive");
  };
  positive(in.C_rho, "C_rho");
  positive(in.C_sigma, "C_sigma");
  positive(in.C_sigma_n, "C_sigma_n");
  positive(in.nu_max, "nu_max");
  positive(in.C_nu_hpd, "C_nu_hpd");
  if (!(in.C_a > 1)) throw std::invalid_argument("prior hyperparameter C_a must exceed 1");
  if (!(in.C_nu > 0 && in.C_nu < in.nu_max))
    throw std::invalid_argument("prior hyperparameter C_nu must lie in (0, nu_max)");
  if (!(in.C_ns_rho > 1 && in.C_ns_sigma > 1 && in.C_ns_v > 1))
    throw std::invalid_argument("non-stationarity thresholds must exceed 1");

  PriorConfig c;
  c.in = in;
  c.lambda_rho = in.C_rho * std::numbers::ln2;
  c.lambda_sigma = std::numbers::ln2 / in.C_sigma;
  c.lambda_sigma_n = std::numbers::ln2 / in.C_sigma_n;
  c.sigma_v = std::log(in.C_a) / std::sqrt(2.0 * std::log(20.0));

  // Concentration phi = p + q with mean mu fixed; HPD width shrinks as phi grows.
  const double mu = in.C_nu / in.nu_max;
  const double target = in.C_nu_hpd / in.nu_max;
  auto width_at = [&](double log_phi) {
    const double phi = std::exp(log_phi);
    return beta_hpd_width(mu * phi, (1.0 - mu) * phi);
  };
  double lo = std::log(std::max(1.0 / mu, 1.0 / (1.0 - mu)));
  double hi = std::log(1e6);
  const double w_lo = width_at(lo), w_hi = width_at(hi);
  if (!(target < w_lo && target > w_hi)) {
    std::ostringstream msg;
    msg << "C_nu_hpd = " << in.C_nu_hpd << " cannot be bracketed; feasible widths lie in ("
        << w_hi * in.nu_max << ", " << w_lo * in.nu_max << ")";
    throw std::invalid_argument(msg.str());
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (width_at(mid) > target ? lo : hi) = mid;
  }
  const double phi = std::exp(0.5 * (lo + hi));
  c.p = mu * phi;
  c.q = (1.0 - mu) * phi;
  return c;
}

double log_prior_stationary(const StationaryTheta& t, const PriorConfig& c, bool with_nu) {
  if (with_nu && !(t.nu > 0 && t.nu < c.in.nu_max)) return -std::numeric_limits<double>::infinity();
  const double rho = std::sqrt(8.0 * t.nu) / t.kappa0;
  double lp = log_prior_range(rho, c) + log_prior_sigma(t.sigma0, c) +
              log_prior_v(t.vx0, t.vy0, c) + log_prior_sigma_n(t.sigma_n, c);
  if (with_nu) lp += log_prior_nu(t.nu, c);
  return lp;
}

Vector spectral_precision(const BasisSpec& spec) {
  Vector q(spec.size());
  for (Index i = 0; i < spec.size(); ++i) {
    const auto [k, l] = spec.index()[i];
    const double a = std::numbers::pi * k / spec.rect().width();
    const double b = std::numbers::pi * l / spec.rect().height();
    q(i) = std::pow(a * a + b * b, 2);
  }
  return q;
}

double log_prior_alpha(const Vector& alpha, const Vector& q_ns, double tau) {
  if (alpha.size() != q_ns.size()) throw DimensionError("log_prior_alpha: length mismatch");
  const double n = static_cast<double>(alpha.size());
  return 0.5 * n * std::log(tau) + 0.5 * q_ns.array().log().sum() -
         0.5 * tau * (q_ns.array() * alpha.array().square()).sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

double log_prior_nonstationary(const FieldParams& params, const SpectralPenalty& penalty) {
  const Vector* fields[4] = {&params.alpha_kappa, &params.alpha_sigma, &params.alpha_vx,
                             &params.alpha_vy};
  double lp = 0.0;
  for (int f = 0; f < 4; ++f)
    if (fields[f]->size() > 0) lp += log_prior_alpha(*fields[f], penalty.q_ns, penalty.tau[f]);
  return lp;
}

namespace {

Matrix calibration_grid(const BasisSpec& spec, int grid) {
  const Rect& r = spec.rect();
  Matrix pts(static_cast<Index>(grid) * grid, 2);
  for (int j = 0; j < grid; ++j)
    for (int i = 0; i < grid; ++i) {
      const double fx = grid > 1 ? static_cast<double>(i) / (grid - 1) : 0.5;
      const double fy = grid > 1 ? static_cast<double>(j) / (grid - 1) : 0.5;
      pts(j * grid + i, 0) = r.x0 + fx * r.width();
      pts(j * grid + i, 1) = r.y0 + fy * r.height();
    }
  return basis_eval(spec, pts);
}

// Statistic of each draw at tau = 1; at other tau it scales by tau^{-1/2}.
Vector unit_statistics(PenaltyTarget target, const BasisSpec& spec, int grid, int n_mc,
                       std::mt19937_64& rng) {
  const Matrix f = calibration_grid(spec, grid);
  const Vector sd = spectral_precision(spec).cwiseSqrt().cwiseInverse();
  std::normal_distribution<double> normal;
  auto draw = [&] {
    Vector a(spec.size());
    for (Index i = 0; i < a.size(); ++i) a(i) = normal(rng) * sd(i);
    return a;
  };
  Vector stat(n_mc);
  for (int s = 0; s < n_mc; ++s) {
    if (target == PenaltyTarget::Anisotropy) {
      const Vector vx = f * draw();
      const Vector vy = f * draw();
      stat(s) = (vx.array().square() + vy.array().square()).sqrt().maxCoeff();
    } else {
      stat(s) = (f * draw()).cwiseAbs().maxCoeff();
    }
  }
  return stat;
}

double fraction_above(const Vector& unit_stat, double tau, double threshold) {
  const double scale = 1.0 / std::sqrt(tau);
  Index count = 0;
  for (Index i = 0; i < unit_stat.size(); ++i)
    if (unit_stat(i) * scale > threshold) ++count;
  return static_cast<double>(count) / static_cast<double>(unit_stat.size());
}

}  // namespace

double exceedance_probability(PenaltyTarget target, double c_ns, double tau,
                              const BasisSpec& spec, int grid, int n_mc, std::mt19937_64& rng) {
  if (!(tau > 0)) throw std::invalid_argument("penalty tau must be positive");
  return fraction_above(unit_statistics(target, spec, grid, n_mc, rng), tau, std::log(c_ns));
}

double calibrate_penalty(PenaltyTarget target, double c_ns, const BasisSpec& spec,
                         std::mt19937_64& rng, const CalibrationOptions& opts) {
  if (!(c_ns > 1)) throw std::invalid_argument("C_NS must exceed 1");
  if (opts.n_mc < 1000) throw std::invalid_argument("calibration needs at least 1000 draws");
  const Vector stat = unit_statistics(target, spec, opts.grid, opts.n_mc, rng);
  const double threshold = std::log(c_ns);
  double lo = opts.log_tau_lo, hi = opts.log_tau_hi;
  if (fraction_above(stat, std::exp(lo), threshold) <= 0.05) return std::exp(lo);
  if (fraction_above(stat, std::exp(hi), threshold) > 0.05)
    throw std::runtime_error("calibrate_penalty: bisection bracket does not contain the target");
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fraction_above(stat, std::exp(mid), threshold) > 0.05 ? lo : hi) = mid;
  }
  return std::exp(hi);
}

}  // namespace fracspde
