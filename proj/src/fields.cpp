#include "fracspde/fields.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fracspde {

BasisSpec::BasisSpec(int max_k, int max_l, const Rect& rect)
    : max_k_(max_k), max_l_(max_l), rect_(rect) {
  if (max_k < 0 || max_l < 0) throw std::invalid_argument("basis frequencies must be >= 0");
  if (!(rect.width() > 0) || !(rect.height() > 0))
    throw std::invalid_argument("basis rectangle must have positive size");
  for (int k = 0; k <= max_k; ++k)
    for (int l = 0; l <= max_l; ++l)
      if (k != 0 || l != 0) index_.emplace_back(k, l);
}

double BasisSpec::normalization(Index i) const {
  const auto [k, l] = index_[i];
  return (k != 0 && l != 0) ? 2.0 : std::numbers::sqrt2;
}

BasisSpec basis_for_count(int count, const Rect& rect) {
  if (count < 1) throw std::invalid_argument("basis count must be positive");
  const int m = std::max(1, static_cast<int>(std::lround(std::sqrt(count + 1.0))) - 1);
  return BasisSpec(m, m, rect);
}

Matrix basis_eval(const BasisSpec& spec, const Matrix& points) {
  const Rect& r = spec.rect();
  const double a = r.width(), b = r.height();
  const double scale = 1.0 / std::sqrt(a * b);
  Matrix out(points.rows(), spec.size());
  for (Index p = 0; p < points.rows(); ++p) {
    const double x = std::clamp(points(p, 0), r.x0, r.x1);
    const double y = std::clamp(points(p, 1), r.y0, r.y1);
    for (Index i = 0; i < spec.size(); ++i) {
      const auto [k, l] = spec.index()[i];
      out(p, i) = std::cos(k * std::numbers::pi * (x - r.x0) / a) *
                  std::cos(l * std::numbers::pi * (y - r.y0) / b) * scale /
                  spec.normalization(i);
    }
  }
  return out;
}

bool FieldParams::stationary() const {
  auto zero = [](const Vector& v) { return v.size() == 0 || (v.array() == 0.0).all(); };
  return zero(alpha_kappa) && zero(alpha_sigma) && zero(alpha_vx) && zero(alpha_vy);
}

PointFields field_values(const FieldParams& params, const BasisSpec& spec, const Matrix& points) {
  const Index n = points.rows();
  auto component = [&](const Vector& alpha, const Matrix& f) -> Vector {
    if (alpha.size() == 0) return Vector::Zero(n);
    if (alpha.size() != spec.size())
      throw DimensionError("coefficient vector length differs from basis size");
    return f * alpha;
  };
  const bool any = params.alpha_kappa.size() || params.alpha_sigma.size() ||
                   params.alpha_vx.size() || params.alpha_vy.size();
  const Matrix f = any ? basis_eval(spec, points) : Matrix(n, 0);
  PointFields out;
  out.kappa = (params.log_kappa0 + component(params.alpha_kappa, f).array()).exp();
  out.sigma = (params.log_sigma0 + component(params.alpha_sigma, f).array()).exp();
  out.vx = params.vx0 + component(params.alpha_vx, f).array();
  out.vy = params.vy0 + component(params.alpha_vy, f).array();
  return out;
}

Eigen::Matrix2d h_from_v(double vx, double vy) {
  const double r2 = vx * vx + vy * vy;
  const double r = std::sqrt(r2);
  const double s = r < 1e-4 ? 1.0 + r2 / 6.0 : std::sinh(r) / r;
  const double c = std::cosh(r);
  Eigen::Matrix2d h;
  h << c + s * vx, s * vy, s * vy, c - s * vx;
  return h;
}

Interpretable interpretable(double kappa, double vx, double vy, double nu) {
  if (!(kappa > 0)) throw std::invalid_argument("kappa must be positive");
  Interpretable out;
  out.rho = std::sqrt(8.0 * nu) / kappa;
  const double r = std::hypot(vx, vy);
  out.a = std::exp(r);
  double psi = r > 0 ? std::atan2(vy, vx) / 2.0 : 0.0;
  if (psi <= -std::numbers::pi / 2) psi += std::numbers::pi;
  out.psi = psi;
  return out;
}

SpdeScalars from_interpretable(const Interpretable& p, double nu) {
  if (!(p.a >= 1.0)) throw std::invalid_argument("anisotropy ratio must be at least 1");
  if (!(p.rho > 0)) throw std::invalid_argument("range must be positive");
  SpdeScalars out;
  out.kappa = std::sqrt(8.0 * nu) / p.rho;
  const double r = std::log(p.a);
  out.vx = r * std::cos(2.0 * p.psi);
  out.vy = r * std::sin(2.0 * p.psi);
  return out;
}

double tau_value(double sigma, double kappa, double beta, double det_h) {
  if (!(beta > 0.5)) throw std::invalid_argument("beta must exceed 1/2");
  return sigma *
         std::sqrt(4.0 * std::numbers::pi * std::exp(std::lgamma(2.0 * beta) -
                                                     std::lgamma(2.0 * beta - 1.0))) *
         std::pow(kappa, 2.0 * beta - 1.0) * std::pow(det_h, 0.25);
}

Vector tau_field(const FieldParams& params, const BasisSpec& spec, const Matrix& points) {
  const PointFields f = field_values(params, spec, points);
  Vector tau(points.rows());
  for (Index i = 0; i < tau.size(); ++i)
    tau(i) = tau_value(f.sigma(i), f.kappa(i), params.beta(), h_from_v(f.vx(i), f.vy(i)).determinant());
  return tau;
}

}  // namespace fracspde
