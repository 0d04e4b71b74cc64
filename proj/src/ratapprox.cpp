#include "fracspde/ratapprox.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace fracspde {

namespace {

constexpr int kChebNodes = 4096;

double poly(const Vector& coef, double x) {
  double s = 0.0;
  for (Index i = coef.size() - 1; i >= 0; --i) s = s * x + coef(i);
  return s;
}

// Coefficient of T_l in (sum_j a_j T_j)(sum_i q_i T_i).
double product_coef(const Vector& q, const Vector& a, int l) {
  double s = 0.0;
  for (Index i = 0; i < q.size(); ++i) {
    if (q(i) == 0.0) continue;
    for (Index j = 0; j < a.size(); ++j) {
      if (i + j == l) s += 0.5 * q(i) * a(j);
      if (std::abs(i - j) == l) s += 0.5 * q(i) * a(j);
    }
  }
  return s;
}

// Monomial coefficients in x of sum_j s_j T_j(alpha x + gamma).
Vector cheb_to_monomial(const Vector& s, double alpha, double gamma) {
  const Index n = s.size();
  Vector out = Vector::Zero(n);
  Vector t_prev = Vector::Zero(n), t_cur = Vector::Zero(n);
  t_prev(0) = 1.0;  // T_0
  out += s(0) * t_prev;
  if (n == 1) return out;
  t_cur(0) = gamma;  // T_1 = alpha x + gamma
  t_cur(1) = alpha;
  out += s(1) * t_cur;
  for (Index j = 2; j < n; ++j) {
    Vector t_next = -t_prev;
    for (Index d = 0; d + 1 < n; ++d) {
      t_next(d) += 2.0 * gamma * t_cur(d);
      t_next(d + 1) += 2.0 * alpha * t_cur(d);
    }
    out += s(j) * t_next;
    t_prev = std::move(t_cur);
    t_cur = std::move(t_next);
  }
  return out;
}

}  // namespace

bool is_integer_beta(double beta) { return std::abs(beta - std::round(beta)) < 1e-12; }

double RationalCoeffs::evaluate(double x) const {
  return std::pow(x, k_beta) * poly(c, x) / poly(b, x);
}

double sup_error(const RationalCoeffs& r, int points) {
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    const double x = r.eps + (1.0 - r.eps) * i / (points - 1);
    worst = std::max(worst, std::abs(r.evaluate(x) - std::pow(x, r.beta)));
  }
  return worst;
}

RationalCoeffs cheb_pade(double beta, int k, double eps) {
  if (!(beta > 0.5)) throw std::invalid_argument("cheb_pade: beta must exceed 1/2");
  if (is_integer_beta(beta)) throw std::invalid_argument("cheb_pade: integer beta has an exact form");
  if (k < 1) throw std::invalid_argument("cheb_pade: order must be >= 1");
  if (!(eps > 0 && eps < 1)) throw std::invalid_argument("cheb_pade: eps must lie in (0, 1)");

  RationalCoeffs r;
  r.k = k;
  r.beta = beta;
  r.eps = eps;
  r.k_beta = std::max(1, static_cast<int>(std::floor(beta)));
  const double gamma_exp = beta - r.k_beta;
  const int m = k, n = k + 1;
  const int terms = m + 2 * n + 3;

  // Chebyshev coefficients of x^g and of its beta-derivative x^g log x.
  Vector a = Vector::Zero(terms), da = Vector::Zero(terms);
  for (int j = 0; j < kChebNodes; ++j) {
    const double theta = std::numbers::pi * (j + 0.5) / kChebNodes;
    const double x = (std::cos(theta) + 1.0) / 2.0 * (1.0 - eps) + eps;
    const double fx = std::pow(x, gamma_exp);
    const double dfx = fx * std::log(x);
    for (int i = 0; i < terms; ++i) {
      const double w = std::cos(i * theta);
      a(i) += fx * w;
      da(i) += dfx * w;
    }
  }
  a *= 2.0 / kChebNodes;
  da *= 2.0 / kChebNodes;
  a(0) /= 2.0;
  da(0) /= 2.0;

  // Denominator q = [1, q1..qn] annihilates T_{m+1}..T_{m+n} of f q.
  Matrix sys(n, n);
  Vector rhs(n), drhs(n);
  for (int row = 0; row < n; ++row) {
    const int l = m + 1 + row;
    for (int i = 1; i <= n; ++i) {
      Vector e = Vector::Zero(n + 1);
      e(i) = 1.0;
      sys(row, i - 1) = product_coef(e, a, l);
    }
    Vector e0 = Vector::Zero(n + 1);
    e0(0) = 1.0;
    rhs(row) = -product_coef(e0, a, l);
  }
  const Eigen::PartialPivLU<Matrix> lu(sys);
  Vector q(n + 1);
  q(0) = 1.0;
  q.tail(n) = lu.solve(rhs);
  for (int row = 0; row < n; ++row) drhs(row) = -product_coef(q, da, m + 1 + row);
  Vector dq = Vector::Zero(n + 1);
  dq.tail(n) = lu.solve(drhs);
  if (!q.allFinite()) throw std::runtime_error("cheb_pade: singular Pade system");

  Vector p(m + 1), dp(m + 1);
  for (int l = 0; l <= m; ++l) {
    p(l) = product_coef(q, a, l);
    dp(l) = product_coef(dq, a, l) + product_coef(q, da, l);
  }

  const double alpha = 2.0 / (1.0 - eps), shift = -(1.0 + eps) / (1.0 - eps);
  r.c = cheb_to_monomial(p, alpha, shift);
  r.b = cheb_to_monomial(q, alpha, shift);
  r.dc_dbeta = cheb_to_monomial(dp, alpha, shift);
  r.db_dbeta = cheb_to_monomial(dq, alpha, shift);

  // Sign scan of the denominator; make it positive.
  const int scan = 10000;
  double sign = 0.0;
  for (int i = 0; i < scan; ++i) {
    const double x = eps + (1.0 - eps) * i / (scan - 1);
    const double v = poly(r.b, x);
    if (v == 0.0 || (sign != 0.0 && v * sign < 0))
      throw std::runtime_error("cheb_pade: denominator vanishes on [eps, 1]");
    if (sign == 0.0) sign = v > 0 ? 1.0 : -1.0;
  }
  if (sign < 0) {
    r.c = -r.c;
    r.b = -r.b;
    r.dc_dbeta = -r.dc_dbeta;
    r.db_dbeta = -r.db_dbeta;
  }
  r.sup_error = sup_error(r);
  if (!std::isfinite(r.sup_error)) throw std::runtime_error("cheb_pade: non-finite fit error");
  return r;
}

void write_coeffs(std::ostream& os, const RationalCoeffs& r) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "beta " << r.beta << "\nk " << r.k << "\nk_beta " << r.k_beta << "\neps " << r.eps
     << "\nsup_error " << r.sup_error << "\nc";
  for (Index i = 0; i < r.c.size(); ++i) os << ' ' << r.c(i);
  os << "\nb";
  for (Index i = 0; i < r.b.size(); ++i) os << ' ' << r.b(i);
  os << '\n';
}

ad::Dense rational_coeffs(const ad::Real& beta, int k, double eps) {
  const RationalCoeffs r = cheb_pade(beta.value(), k, eps);
  Matrix value(r.c.size() + r.b.size(), 1);
  value << r.c, r.b;
  Vector jac(value.size());
  jac << r.dc_dbeta, r.db_dbeta;
  const int ib = beta.id();
  return beta.tape()->record(std::move(value), {ib}, [ib, jac](ad::Tape& t, int self) {
    t.adjoint<double>(ib) += t.adjoint<Matrix>(self).reshaped().dot(jac);
  });
}

FracVars assemble_frac(const ad::Sparse& L, const Vector& c, const ad::Dense& ct2_diag,
                       const ad::Real& kappa_min, const ad::Real& beta, int k, double eps) {
  ad::Tape& tape = *L.tape();
  const Index n = c.size();
  const Vector cinv = c.cwiseInverse();
  const ad::Sparse cl = ad::scale_rows(cinv, L);
  FracVars out;
  ad::Sparse pl;
  if (is_integer_beta(beta.value())) {
    const int b = static_cast<int>(std::lround(beta.value()));
    if (b < 1) throw std::invalid_argument("assemble_frac: beta must be positive");
    pl = cl;
    for (int i = 1; i < b; ++i) pl = pl * cl;
    out.P_R = tape.constant(sparse_identity(n));
  } else {
    const ad::Real log_kmin = ad::log(kappa_min);
    const ad::Sparse m = cl * ad::exp(log_kmin * -2.0);
    const ad::Dense coef = rational_coeffs(beta, k, eps);
    const int k_beta = std::max(1, static_cast<int>(std::floor(beta.value())));
    // sum_i b_i M^{k+1-i} by Horner.
    ad::Sparse den = ad::add_identity(m * ad::element(coef, k + 1), ad::element(coef, k + 2));
    for (int i = 2; i <= k + 1; ++i)
      den = ad::add_identity(den * m, ad::element(coef, k + 1 + i));
    for (int i = 1; i < k_beta; ++i) den = den * m;
    pl = den * ad::exp(log_kmin * beta * 2.0);
    ad::Sparse num = ad::add_identity(m * ad::element(coef, 0), ad::element(coef, 1));
    for (int i = 2; i <= k; ++i) num = ad::add_identity(num * m, ad::element(coef, i));
    out.P_R = num;
  }
  const ad::Dense d =
      ad::cwise_product(tape.constant(Matrix(c.cwiseAbs2())), ad::exp(ad::log(ct2_diag) * -1.0));
  out.P_L = pl;
  out.Qtilde = ad::transpose(pl) * ad::scale_rows(pl, d);
  return out;
}

FracOperator assemble_frac(const FemMatrices& fem, double kappa_min, double beta, int k,
                           double eps) {
  ad::Tape tape;
  const FracVars v = assemble_frac(tape.constant(fem.L), Vector(fem.C.diagonal()),
                                   tape.constant(Matrix(Vector(fem.C_t2.diagonal()))),
                                   tape.constant(kappa_min), tape.constant(beta), k, eps);
  FracOperator out;
  out.P_L = v.P_L.value();
  out.P_R = v.P_R.value();
  out.Qtilde = v.Qtilde.value();
  out.kappa_min = kappa_min;
  out.integer = is_integer_beta(beta);
  return out;
}

Vector sample_weights(const FracOperator& frac, const CholFactor& factor, const Vector& z) {
  if (z.size() != factor.size()) throw DimensionError("sample_weights: draw length mismatch");
  const Vector w_tilde = factor.solve_lt_permuted(z);
  return frac.P_R * w_tilde;
}

Vector sample_weights(const FracOperator& frac, std::mt19937_64& rng) {
  const CholFactor factor = cholesky(frac.Qtilde);
  std::normal_distribution<double> normal;
  Vector z(factor.size());
  for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return sample_weights(frac, factor, z);
}

}  // namespace fracspde
