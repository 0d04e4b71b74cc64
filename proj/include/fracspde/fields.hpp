#pragma once

#include <utility>
#include <vector>

#include "fracspde/mesh.hpp"

namespace fracspde {

/// Cosine eigenfunctions of the Neumann Laplacian on `rect` with
/// frequencies (k, l) in {0..M} x {0..N} minus (0, 0), ordered
/// lexicographically in (k, l).
class BasisSpec {
 public:
  BasisSpec() = default;
  BasisSpec(int max_k, int max_l, const Rect& rect);

  int max_k() const { return max_k_; }
  int max_l() const { return max_l_; }
  const Rect& rect() const { return rect_; }
  Index size() const { return static_cast<Index>(index_.size()); }
  const std::vector<std::pair<int, int>>& index() const { return index_; }
  /// 2 when both frequencies are non-zero, sqrt(2) otherwise.
  double normalization(Index i) const;

 private:
  int max_k_ = 0, max_l_ = 0;
  Rect rect_;
  std::vector<std::pair<int, int>> index_;
};

/// Square basis whose size is closest to `count` functions: 8 gives
/// M = N = 2, 16 gives M = N = 3 (15 functions).
BasisSpec basis_for_count(int count, const Rect& rect);

/// points x |E| matrix of basis values. Points outside the rectangle use
/// coordinates clamped to its edges.
Matrix basis_eval(const BasisSpec& spec, const Matrix& points);

/// Stationary scalars plus basis coefficients. Empty coefficient vectors
/// mean a stationary field.
struct FieldParams {
  double log_kappa0 = 0.0;
  double log_sigma0 = 0.0;
  double vx0 = 0.0;
  double vy0 = 0.0;
  double nu = 1.0;
  Vector alpha_kappa, alpha_sigma, alpha_vx, alpha_vy;

  double beta() const { return (nu + 1.0) / 2.0; }
  bool stationary() const;
};

struct PointFields {
  Vector kappa, sigma, vx, vy;
};

PointFields field_values(const FieldParams& params, const BasisSpec& spec, const Matrix& points);

/// cosh|v| I + sinh|v|/|v| [[vx, vy], [vy, -vx]].
Eigen::Matrix2d h_from_v(double vx, double vy);

/// Range, anisotropy ratio and angle of the local iso-correlation ellipse.
struct Interpretable {
  double rho = 0.0;
  double a = 1.0;
  double psi = 0.0;
};

Interpretable interpretable(double kappa, double vx, double vy, double nu);

struct SpdeScalars {
  double kappa = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

/// Inverse of `interpretable`; a < 1 is rejected.
SpdeScalars from_interpretable(const Interpretable& p, double nu);

/// sigma sqrt(4 pi Gamma(2 beta) / Gamma(2 beta - 1)) kappa^(2 beta - 1) |H|^(1/4).
double tau_value(double sigma, double kappa, double beta, double det_h = 1.0);
Vector tau_field(const FieldParams& params, const BasisSpec& spec, const Matrix& points);

}  // namespace fracspde
