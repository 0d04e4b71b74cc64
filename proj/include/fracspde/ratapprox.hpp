#pragma once

#include <iosfwd>
#include <random>

#include "fracspde/fem.hpp"
#include "fracspde/tape.hpp"

namespace fracspde {

/// x^beta ~ x^{k_beta} p(x) / q(x) on [eps, 1], with p of degree k and q of
/// degree k + 1. In the notation P_R(x) = sum c_i x^i and
/// P_L(x) = x^{k_beta} sum b_i x^i.
struct RationalCoeffs {
  int k = 1;
  double beta = 0.0;
  int k_beta = 1;
  double eps = 1e-4;
  Vector c;  ///< numerator, k + 1 monomial coefficients
  Vector b;  ///< denominator, k + 2 monomial coefficients
  Vector dc_dbeta, db_dbeta;
  /// max |r(x) - x^beta| over the check grid.
  double sup_error = 0.0;

  double evaluate(double x) const;
};

/// Clenshaw-Lord Chebyshev-Pade coefficients for non-integer beta > 1/2.
/// Throws when the denominator changes sign on [eps, 1].
RationalCoeffs cheb_pade(double beta, int k, double eps = 1e-4);

/// Sup error of a coefficient set against x^beta on `points` equispaced
/// nodes of [eps, 1].
double sup_error(const RationalCoeffs& r, int points = 10001);

void write_coeffs(std::ostream& os, const RationalCoeffs& r);

/// Tape node holding (c, b) as a function of beta, differentiated through
/// the coefficient construction.
ad::Dense rational_coeffs(const ad::Real& beta, int k, double eps);

/// True when beta is within 1e-12 of an integer.
bool is_integer_beta(double beta);

struct FracOperator {
  SparseMatrix P_L, P_R, Qtilde;
  double kappa_min = 0.0;
  bool integer = false;
};

struct FracVars {
  ad::Sparse P_L, P_R, Qtilde;
};

/// Builds P_L, P_R and Q~ = P_L^T C C_{tau^2}^{-1} C P_L on the tape from
/// L, the lumped mass diagonal c and the diagonal of C_{tau^2}. Integer beta
/// uses P_R = I and P_L = (C^{-1} L)^beta.
FracVars assemble_frac(const ad::Sparse& L, const Vector& c, const ad::Dense& ct2_diag,
                       const ad::Real& kappa_min, const ad::Real& beta, int k, double eps);

/// Plain-value version of the above.
FracOperator assemble_frac(const FemMatrices& fem, double kappa_min, double beta, int k,
                           double eps = 1e-4);

/// w = P_R w~ with w~ ~ N(0, Q~^{-1}). `z` are standard normal draws.
Vector sample_weights(const FracOperator& frac, const CholFactor& factor, const Vector& z);
Vector sample_weights(const FracOperator& frac, std::mt19937_64& rng);

}  // namespace fracspde
