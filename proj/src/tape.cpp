#include "fracspde/tape.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>

#include "fracspde/sparse_vjp.hpp"

namespace fracspde::ad {

template <>
double& Tape::adjoint<double>(int id) {
  auto& slot = nodes_[id].adjoint;
  if (std::holds_alternative<std::monostate>(slot)) slot = 0.0;
  return std::get<double>(slot);
}

template <>
Matrix& Tape::adjoint<Matrix>(int id) {
  auto& slot = nodes_[id].adjoint;
  if (std::holds_alternative<std::monostate>(slot)) {
    const Matrix& v = std::get<Matrix>(nodes_[id].value);
    slot = Matrix::Zero(v.rows(), v.cols());
  }
  return std::get<Matrix>(slot);
}

template <>
SparseMatrix& Tape::adjoint<SparseMatrix>(int id) {
  auto& slot = nodes_[id].adjoint;
  if (std::holds_alternative<std::monostate>(slot))
    slot = zero_like(std::get<SparseMatrix>(nodes_[id].value));
  return std::get<SparseMatrix>(slot);
}

void Tape::backward(const Real& output, double seed) {
  for (auto& node : nodes_) node.adjoint = std::monostate{};
  adjoint<double>(output.id()) = seed;
  for (int id = output.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.backward && !std::holds_alternative<std::monostate>(node.adjoint))
      node.backward(*this, id);
  }
}

Vector gradient(Tape& tape, const Real& output, std::span<const Dense> inputs) {
  tape.backward(output);
  Index total = 0;
  for (const auto& in : inputs) total += in.value().size();
  Vector g = Vector::Zero(total);
  Index offset = 0;
  for (const auto& in : inputs) {
    const Index len = in.value().size();
    if (tape.has_adjoint(in.id())) {
      const Matrix& a = tape.adjoint<Matrix>(in.id());
      g.segment(offset, len) = Eigen::Map<const Vector>(a.data(), len);
    }
    offset += len;
  }
  return g;
}

namespace {

Tape& tape_of(const auto& a) { return *a.tape(); }

}  // namespace

// ---------------------------------------------------------------------------
// Scalars

Real operator+(const Real& a, const Real& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const double g = t.adjoint<double>(self);
    if (t.active(ia)) t.adjoint<double>(ia) += g;
    if (t.active(ib)) t.adjoint<double>(ib) += g;
  });
}

Real operator-(const Real& a, const Real& b) { return a + (-b); }

Real operator*(const Real& a, const Real& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const double g = t.adjoint<double>(self);
    const double va = t.value<double>(ia), vb = t.value<double>(ib);
    if (t.active(ia)) t.adjoint<double>(ia) += g * vb;
    if (t.active(ib)) t.adjoint<double>(ib) += g * va;
  });
}

Real operator/(const Real& a, const Real& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() / b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const double g = t.adjoint<double>(self);
    const double va = t.value<double>(ia), vb = t.value<double>(ib);
    if (t.active(ia)) t.adjoint<double>(ia) += g / vb;
    if (t.active(ib)) t.adjoint<double>(ib) -= g * va / (vb * vb);
  });
}

Real operator+(const Real& a, double b) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value() + b, {ia}, [ia](Tape& t, int self) {
    t.adjoint<double>(ia) += t.adjoint<double>(self);
  });
}
Real operator+(double a, const Real& b) { return b + a; }
Real operator-(const Real& a, double b) { return a + (-b); }
Real operator-(double a, const Real& b) { return (-b) + a; }

Real operator/(double a, const Real& b) {
  Tape& t = tape_of(b);
  const int ib = b.id();
  const double vb = b.value();
  return t.record(a / vb, {ib}, [ib, a, vb](Tape& t, int self) {
    t.adjoint<double>(ib) -= t.adjoint<double>(self) * a / (vb * vb);
  });
}

Real operator*(const Real& a, double b) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value() * b, {ia}, [ia, b](Tape& t, int self) {
    t.adjoint<double>(ia) += b * t.adjoint<double>(self);
  });
}
Real operator*(double a, const Real& b) { return b * a; }
Real operator-(const Real& a) { return a * -1.0; }

namespace {

template <class F, class D>
Real unary(const Real& a, F f, D df) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const double x = a.value();
  return t.record(f(x), {ia}, [ia, x, df](Tape& t, int self) {
    t.adjoint<double>(ia) += t.adjoint<double>(self) * df(x);
  });
}

}  // namespace

Real exp(const Real& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}
Real log(const Real& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}
Real sqrt(const Real& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}
Real lgamma(const Real& a) {
  return unary(
      a, [](double x) { return std::lgamma(x); },
      [](double x) { return boost::math::digamma(x); });
}
Real logistic(const Real& a) {
  auto f = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(a, f, [f](double x) {
    const double s = f(x);
    return s * (1.0 - s);
  });
}

Real avoid_integers(const Real& a, double half_width) {
  const double x = a.value();
  const double r = std::round(x);
  if (std::abs(x - r) >= half_width) return a * 1.0;
  const double pushed = x >= r ? r + half_width : r - half_width;
  return unary(a, [pushed](double) { return pushed; }, [](double) { return 0.0; });
}

// ---------------------------------------------------------------------------
// Dense

Real element(const Dense& x, Index i) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(x.value()(i), {ix}, [ix, i](Tape& t, int self) {
    t.adjoint<Matrix>(ix)(i) += t.adjoint<double>(self);
  });
}

Dense segment(const Dense& x, Index start, Index length) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  Matrix v = x.value().reshaped().segment(start, length);
  return t.record(std::move(v), {ix}, [ix, start, length](Tape& t, int self) {
    t.adjoint<Matrix>(ix).reshaped().segment(start, length) += t.adjoint<Matrix>(self).reshaped();
  });
}

Dense concat(std::span<const Real> parts) {
  Tape& t = tape_of(parts.front());
  std::vector<int> ids;
  Matrix v(parts.size(), 1);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    ids.push_back(parts[k].id());
    v(k) = parts[k].value();
  }
  return t.record(std::move(v), std::span<const int>(ids), [ids](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.active(ids[k])) t.adjoint<double>(ids[k]) += g(k);
  });
}

Dense operator+(const Dense& a, const Dense& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(Matrix(a.value() + b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    if (t.active(ia)) t.adjoint<Matrix>(ia) += g;
    if (t.active(ib)) t.adjoint<Matrix>(ib) += g;
  });
}

Dense operator-(const Dense& a, const Dense& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(Matrix(a.value() - b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    if (t.active(ia)) t.adjoint<Matrix>(ia) += g;
    if (t.active(ib)) t.adjoint<Matrix>(ib) -= g;
  });
}

Dense operator-(const Matrix& a, const Dense& b) {
  Tape& t = tape_of(b);
  const int ib = b.id();
  return t.record(Matrix(a - b.value()), {ib}, [ib](Tape& t, int self) {
    t.adjoint<Matrix>(ib) -= t.adjoint<Matrix>(self);
  });
}

Dense cwise_product(const Dense& a, const Dense& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(Matrix(a.value().cwiseProduct(b.value())), {ia, ib},
                  [ia, ib](Tape& t, int self) {
                    const Matrix& g = t.adjoint<Matrix>(self);
                    if (t.active(ia)) t.adjoint<Matrix>(ia) += g.cwiseProduct(t.value<Matrix>(ib));
                    if (t.active(ib)) t.adjoint<Matrix>(ib) += g.cwiseProduct(t.value<Matrix>(ia));
                  });
}

Dense operator*(const Dense& x, const Real& s) {
  Tape& t = tape_of(x);
  const int ix = x.id(), is = s.id();
  return t.record(Matrix(x.value() * s.value()), {ix, is}, [ix, is](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    if (t.active(ix)) t.adjoint<Matrix>(ix) += g * t.value<double>(is);
    if (t.active(is)) t.adjoint<double>(is) += g.cwiseProduct(t.value<Matrix>(ix)).sum();
  });
}

Dense operator*(const Dense& x, double s) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(Matrix(x.value() * s), {ix}, [ix, s](Tape& t, int self) {
    t.adjoint<Matrix>(ix) += s * t.adjoint<Matrix>(self);
  });
}

Dense operator+(const Dense& x, const Real& s) {
  Tape& t = tape_of(x);
  const int ix = x.id(), is = s.id();
  return t.record(Matrix(x.value().array() + s.value()), {ix, is}, [ix, is](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    if (t.active(ix)) t.adjoint<Matrix>(ix) += g;
    if (t.active(is)) t.adjoint<double>(is) += g.sum();
  });
}

Dense exp(const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(Matrix(x.value().array().exp()), {ix}, [ix](Tape& t, int self) {
    t.adjoint<Matrix>(ix) += t.adjoint<Matrix>(self).cwiseProduct(t.value<Matrix>(self));
  });
}

Dense log(const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(Matrix(x.value().array().log()), {ix}, [ix](Tape& t, int self) {
    t.adjoint<Matrix>(ix) += t.adjoint<Matrix>(self).cwiseQuotient(t.value<Matrix>(ix));
  });
}

Dense matmul(const Matrix& m, const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(Matrix(m * x.value()), {ix}, [ix, m](Tape& t, int self) {
    t.adjoint<Matrix>(ix).noalias() += m.transpose() * t.adjoint<Matrix>(self);
  });
}

Dense matmul(const SparseMatrix& m, const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(Matrix(m * x.value()), {ix}, [ix, m](Tape& t, int self) {
    t.adjoint<Matrix>(ix) += m.transpose() * t.adjoint<Matrix>(self);
  });
}

Real sum(const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(x.value().sum(), {ix}, [ix](Tape& t, int self) {
    t.adjoint<Matrix>(ix).array() += t.adjoint<double>(self);
  });
}

Real dot(const Dense& a, const Dense& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()).sum(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const double g = t.adjoint<double>(self);
    if (t.active(ia)) t.adjoint<Matrix>(ia) += g * t.value<Matrix>(ib);
    if (t.active(ib)) t.adjoint<Matrix>(ib) += g * t.value<Matrix>(ia);
  });
}

Real squared_norm(const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  return t.record(x.value().squaredNorm(), {ix}, [ix](Tape& t, int self) {
    t.adjoint<Matrix>(ix) += 2.0 * t.adjoint<double>(self) * t.value<Matrix>(ix);
  });
}

Real min_coeff(const Dense& x) {
  Tape& t = tape_of(x);
  const int ix = x.id();
  Index arg = 0;
  const double v = x.value().reshaped().minCoeff(&arg);
  return t.record(v, {ix}, [ix, arg](Tape& t, int self) {
    t.adjoint<Matrix>(ix)(arg) += t.adjoint<double>(self);
  });
}

namespace {

struct TensorPartials {
  double h11, h12, h22;
  // d h / d vx and d h / d vy
  double h11_x, h11_y, h12_x, h12_y, h22_x, h22_y;
};

TensorPartials tensor_partials(double vx, double vy) {
  const double r2 = vx * vx + vy * vy;
  const double r = std::sqrt(r2);
  // s = sinh(r)/r and g = s'(r)/r, by series near zero.
  double s, g;
  if (r < 1e-2) {
    s = 1.0 + r2 / 6.0 + r2 * r2 / 120.0;
    g = 1.0 / 3.0 + r2 / 30.0 + r2 * r2 / 840.0;
  } else {
    s = std::sinh(r) / r;
    g = (r * std::cosh(r) - std::sinh(r)) / (r2 * r);
  }
  const double c = std::cosh(r);
  TensorPartials p;
  p.h11 = c + s * vx;
  p.h12 = s * vy;
  p.h22 = c - s * vx;
  p.h11_x = s * vx + g * vx * vx + s;
  p.h11_y = s * vy + g * vx * vy;
  p.h12_x = g * vx * vy;
  p.h12_y = g * vy * vy + s;
  p.h22_x = s * vx - g * vx * vx - s;
  p.h22_y = s * vy - g * vx * vy;
  return p;
}

}  // namespace

TensorEntries aniso_tensor(const Dense& vx, const Dense& vy) {
  Tape& t = tape_of(vx);
  const int ix = vx.id(), iy = vy.id();
  const Index n = vx.value().size();
  Matrix h11(n, 1), h12(n, 1), h22(n, 1);
  for (Index i = 0; i < n; ++i) {
    const TensorPartials p = tensor_partials(vx.value()(i), vy.value()(i));
    h11(i) = p.h11;
    h12(i) = p.h12;
    h22(i) = p.h22;
  }
  auto make = [&](Matrix value, int which) {
    return t.record(std::move(value), {ix, iy}, [ix, iy, which](Tape& t, int self) {
      const Matrix& g = t.adjoint<Matrix>(self);
      const Matrix& x = t.value<Matrix>(ix);
      const Matrix& y = t.value<Matrix>(iy);
      Matrix* gx = t.active(ix) ? &t.adjoint<Matrix>(ix) : nullptr;
      Matrix* gy = t.active(iy) ? &t.adjoint<Matrix>(iy) : nullptr;
      for (Index i = 0; i < g.size(); ++i) {
        const TensorPartials p = tensor_partials(x(i), y(i));
        const double dx = which == 0 ? p.h11_x : which == 1 ? p.h12_x : p.h22_x;
        const double dy = which == 0 ? p.h11_y : which == 1 ? p.h12_y : p.h22_y;
        if (gx) (*gx)(i) += g(i) * dx;
        if (gy) (*gy)(i) += g(i) * dy;
      }
    });
  };
  return {make(std::move(h11), 0), make(std::move(h12), 1), make(std::move(h22), 2)};
}

// ---------------------------------------------------------------------------
// Sparse

Sparse with_values(const SparseMatrix& pattern, const Dense& values) {
  Tape& t = tape_of(values);
  if (values.value().size() != pattern.nonZeros())
    throw DimensionError("with_values: value count differs from pattern size");
  SparseMatrix m = pattern;
  m.makeCompressed();
  std::copy(values.value().data(), values.value().data() + m.nonZeros(), m.valuePtr());
  const int iv = values.id();
  return t.record(std::move(m), {iv}, [iv](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    t.adjoint<Matrix>(iv).reshaped() += Eigen::Map<const Vector>(g.valuePtr(), g.nonZeros());
  });
}

Sparse operator*(const Sparse& a, const Sparse& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(sparse_product(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    const SparseMatrix& va = t.value<SparseMatrix>(ia);
    const SparseMatrix& vb = t.value<SparseMatrix>(ib);
    if (t.active(ia)) {
      SparseMatrix abar = zero_like(va);
      masked_product(g, SparseMatrix(vb.transpose()), abar);
      scatter_add(abar, t.adjoint<SparseMatrix>(ia));
    }
    if (t.active(ib)) {
      SparseMatrix bbar = zero_like(vb);
      masked_product(SparseMatrix(va.transpose()), g, bbar);
      scatter_add(bbar, t.adjoint<SparseMatrix>(ib));
    }
  });
}

Sparse operator+(const Sparse& a, const Sparse& b) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(sparse_add(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    const ProductAdjoints pa =
        vjp_sparse_add(t.value<SparseMatrix>(ia), t.value<SparseMatrix>(ib), g);
    if (t.active(ia)) scatter_add(pa.a_bar, t.adjoint<SparseMatrix>(ia));
    if (t.active(ib)) scatter_add(pa.b_bar, t.adjoint<SparseMatrix>(ib));
  });
}

Sparse operator*(const Sparse& a, const Real& s) {
  Tape& t = tape_of(a);
  const int ia = a.id(), is = s.id();
  SparseMatrix v = a.value() * s.value();
  v.makeCompressed();
  return t.record(std::move(v), {ia, is}, [ia, is](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    const SparseMatrix& va = t.value<SparseMatrix>(ia);
    const auto gv = Eigen::Map<const Vector>(g.valuePtr(), g.nonZeros());
    if (t.active(ia)) {
      SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
      Eigen::Map<Vector>(ga.valuePtr(), ga.nonZeros()) += t.value<double>(is) * gv;
    }
    if (t.active(is))
      t.adjoint<double>(is) += gv.dot(Eigen::Map<const Vector>(va.valuePtr(), va.nonZeros()));
  });
}

Sparse transpose(const Sparse& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  SparseMatrix v = a.value().transpose();
  v.makeCompressed();
  return t.record(std::move(v), {ia}, [ia](Tape& t, int self) {
    SparseMatrix gt = t.adjoint<SparseMatrix>(self).transpose();
    scatter_add(gt, t.adjoint<SparseMatrix>(ia));
  });
}

Sparse scale_rows(const Sparse& a, const Dense& d) {
  Tape& t = tape_of(a);
  const int ia = a.id(), id = d.id();
  SparseMatrix v = a.value();
  const Matrix& dv = d.value();
  for (Index k = 0; k < v.nonZeros(); ++k) v.valuePtr()[k] *= dv(v.innerIndexPtr()[k]);
  return t.record(std::move(v), {ia, id}, [ia, id](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    const SparseMatrix& va = t.value<SparseMatrix>(ia);
    const Matrix& dv = t.value<Matrix>(id);
    if (t.active(ia)) {
      SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
      for (Index k = 0; k < g.nonZeros(); ++k)
        ga.valuePtr()[k] += g.valuePtr()[k] * dv(g.innerIndexPtr()[k]);
    }
    if (t.active(id)) {
      Matrix& gd = t.adjoint<Matrix>(id);
      for (Index k = 0; k < g.nonZeros(); ++k)
        gd(g.innerIndexPtr()[k]) += g.valuePtr()[k] * va.valuePtr()[k];
    }
  });
}

Sparse scale_rows(const Vector& d, const Sparse& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  SparseMatrix v = a.value();
  for (Index k = 0; k < v.nonZeros(); ++k) v.valuePtr()[k] *= d(v.innerIndexPtr()[k]);
  return t.record(std::move(v), {ia}, [ia, d](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
    for (Index k = 0; k < g.nonZeros(); ++k)
      ga.valuePtr()[k] += g.valuePtr()[k] * d(g.innerIndexPtr()[k]);
  });
}

Sparse add_identity(const Sparse& a, const Real& s) {
  Tape& t = tape_of(a);
  const int ia = a.id(), is = s.id();
  const SparseMatrix eye = sparse_identity(a.value().rows());
  return t.record(sparse_add(a.value(), eye, 1.0, s.value()), {ia, is},
                  [ia, is](Tape& t, int self) {
                    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
                    if (t.active(ia)) {
                      const SparseMatrix& va = t.value<SparseMatrix>(ia);
                      scatter_add(vjp_sparse_add(va, va, g).a_bar, t.adjoint<SparseMatrix>(ia));
                    }
                    if (t.active(is)) {
                      double trace = 0.0;
                      for (Index j = 0; j < g.cols(); ++j)
                        for (SparseMatrix::InnerIterator it(g, j); it; ++it)
                          if (it.index() == j) trace += it.value();
                      t.adjoint<double>(is) += trace;
                    }
                  });
}

Sparse hstack(const Sparse& a, const Matrix& x) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const SparseMatrix& va = a.value();
  if (x.rows() != va.rows() && x.cols() > 0) throw DimensionError("hstack: row counts differ");
  std::vector<Triplet> trip;
  trip.reserve(va.nonZeros() + x.size());
  for (Index j = 0; j < va.cols(); ++j)
    for (SparseMatrix::InnerIterator it(va, j); it; ++it)
      trip.emplace_back(it.index(), int(j), it.value());
  SparseMatrix v(va.rows(), va.cols() + x.cols());
  v.setFromTriplets(trip.begin(), trip.end());
  // Dense block: insert explicitly so zeros stay structural.
  v.reserve(Eigen::VectorXi::Constant(v.cols(), int(va.rows())));
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) v.insert(i, va.cols() + j) = x(i, j);
  v.makeCompressed();
  const Index m = va.cols();
  return t.record(std::move(v), {ia}, [ia, m](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    SparseMatrix left = g.leftCols(m);
    scatter_add(left, t.adjoint<SparseMatrix>(ia));
  });
}

Sparse blockdiag(const Sparse& a, double tau, Index p) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const SparseMatrix& va = a.value();
  const Index m = va.rows();
  std::vector<Triplet> trip;
  trip.reserve(va.nonZeros() + p);
  for (Index j = 0; j < va.cols(); ++j)
    for (SparseMatrix::InnerIterator it(va, j); it; ++it)
      trip.emplace_back(it.index(), int(j), it.value());
  for (Index k = 0; k < p; ++k) trip.emplace_back(int(m + k), int(m + k), tau);
  SparseMatrix v = assemble_csc(trip, m + p);
  return t.record(std::move(v), {ia}, [ia, m](Tape& t, int self) {
    const SparseMatrix& g = t.adjoint<SparseMatrix>(self);
    SparseMatrix block = g.topLeftCorner(m, m);
    scatter_add(block, t.adjoint<SparseMatrix>(ia));
  });
}

Dense spmv(const Sparse& a, const Dense& x) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ix = x.id();
  return t.record(Matrix(a.value() * x.value()), {ia, ix}, [ia, ix](Tape& t, int self) {
    const Matrix& g = t.adjoint<Matrix>(self);
    const SparseMatrix& va = t.value<SparseMatrix>(ia);
    const Matrix& vx = t.value<Matrix>(ix);
    if (t.active(ix)) t.adjoint<Matrix>(ix) += va.transpose() * g;
    if (t.active(ia)) {
      SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
      for (Index j = 0; j < ga.cols(); ++j)
        for (SparseMatrix::InnerIterator it(ga, j); it; ++it)
          it.valueRef() += g.row(it.index()).dot(vx.row(j));
    }
  });
}

Dense spmv_transposed(const Sparse& a, const Dense& x) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ix = x.id();
  return t.record(Matrix(a.value().transpose() * x.value()), {ia, ix},
                  [ia, ix](Tape& t, int self) {
                    const Matrix& g = t.adjoint<Matrix>(self);
                    const SparseMatrix& va = t.value<SparseMatrix>(ia);
                    const Matrix& vx = t.value<Matrix>(ix);
                    if (t.active(ix)) t.adjoint<Matrix>(ix) += va * g;
                    if (t.active(ia)) {
                      SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
                      for (Index j = 0; j < ga.cols(); ++j)
                        for (SparseMatrix::InnerIterator it(ga, j); it; ++it)
                          it.valueRef() += vx.row(it.index()).dot(g.row(j));
                    }
                  });
}

Dense spmv_transposed(const Sparse& a, const Matrix& x) {
  return spmv_transposed(a, a.tape()->constant(x));
}

Real quad_form(const Sparse& a, const Dense& x) {
  Tape& t = tape_of(a);
  const int ia = a.id(), ix = x.id();
  const Matrix ax = a.value() * x.value();
  const double v = x.value().cwiseProduct(ax).sum();
  return t.record(v, {ia, ix}, [ia, ix](Tape& t, int self) {
    const double g = t.adjoint<double>(self);
    const SparseMatrix& va = t.value<SparseMatrix>(ia);
    const Matrix& vx = t.value<Matrix>(ix);
    if (t.active(ix)) t.adjoint<Matrix>(ix) += g * (va * vx + va.transpose() * vx);
    if (t.active(ia)) {
      SparseMatrix& ga = t.adjoint<SparseMatrix>(ia);
      for (Index j = 0; j < ga.cols(); ++j)
        for (SparseMatrix::InnerIterator it(ga, j); it; ++it)
          it.valueRef() += g * vx.row(it.index()).dot(vx.row(j));
    }
  });
}

Factorized factorize(const Sparse& a, std::shared_ptr<const CholeskySymbolic>* symbolic) {
  std::shared_ptr<const CholeskySymbolic> sym;
  if (symbolic && *symbolic && (*symbolic)->matches(a.value())) sym = *symbolic;
  if (!sym) {
    sym = analyze(a.value());
    if (symbolic) *symbolic = sym;
  }
  return {a, std::make_shared<const CholFactor>(sym, a.value())};
}

Dense solve(const Factorized& f, const Dense& b) {
  Tape& t = tape_of(b);
  const int ia = f.matrix.id(), ib = b.id();
  auto factor = f.factor;
  return t.record(factor->solve(b.value()), {ia, ib}, [ia, ib, factor](Tape& t, int self) {
    const SolveAdjoints adj = vjp_sparse_solve(t.value<SparseMatrix>(ia), *factor,
                                               t.value<Matrix>(self), t.adjoint<Matrix>(self));
    if (t.active(ib)) t.adjoint<Matrix>(ib) += adj.b_bar;
    if (t.active(ia)) scatter_add(adj.a_bar, t.adjoint<SparseMatrix>(ia));
  });
}

Dense solve(const Factorized& f, const Matrix& b) {
  return solve(f, f.matrix.tape()->constant(b));
}

Real logdet(const Factorized& f) {
  Tape& t = tape_of(f.matrix);
  const int ia = f.matrix.id();
  auto factor = f.factor;
  return t.record(factor->log_det(), {ia}, [ia, factor](Tape& t, int self) {
    const MaskedAdjoint abar =
        vjp_sparse_logdet(t.value<SparseMatrix>(ia), *factor, t.adjoint<double>(self));
    scatter_add(abar, t.adjoint<SparseMatrix>(ia));
  });
}

}  // namespace fracspde::ad
