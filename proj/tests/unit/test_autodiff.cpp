#include <doctest.h>

#include <cstring>
#include <functional>
#include <random>

#include "dense_oracle.hpp"
#include "fixtures.hpp"
#include "fracspde/sparse_vjp.hpp"
#include "fracspde/tape.hpp"

using namespace fracspde;
namespace ad = fracspde::ad;

namespace {

using Builder = std::function<ad::Real(ad::Tape&, const ad::Dense&)>;

Vector tape_gradient(const Builder& f, const Vector& x) {
  ad::Tape tape;
  const ad::Dense in = tape.variable(Matrix(x));
  const ad::Real out = f(tape, in);
  const ad::Dense inputs[] = {in};
  return ad::gradient(tape, out, inputs);
}

double tape_value(const Builder& f, const Vector& x) {
  ad::Tape tape;
  return f(tape, tape.constant(Matrix(x))).value();
}

void check_against_fd(const Builder& f, const Vector& x, double tol) {
  const Vector g = tape_gradient(f, x);
  const Vector fd = oracle::finite_gradient([&](const Vector& y) { return tape_value(f, y); }, x, 1e-6);
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  for (Index i = 0; i < x.size(); ++i) CHECK(std::abs(g(i) - fd(i)) < tol * scale);
}

// Symmetric matrix with `pattern`'s structure built from free values, so
// finite differences see the same perturbation the factorization does.
ad::Sparse symmetric(ad::Tape& t, const SparseMatrix& pattern, const ad::Dense& v) {
  const ad::Sparse a = ad::with_values(pattern, v);
  return (a + ad::transpose(a)) * t.constant(0.5);
}

Vector random_vector(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace

TEST_CASE("scalar gradients") {
  Vector x(1);
  x << 3.0;
  Vector g = tape_gradient([](ad::Tape&, const ad::Dense& v) {
    const ad::Real a = ad::element(v, 0);
    return a * a;
  }, x);
  CHECK(g(0) == doctest::Approx(6.0));

  Vector xy(2);
  xy << 2.0, 5.0;
  g = tape_gradient([](ad::Tape&, const ad::Dense& v) { return ad::element(v, 0) * ad::element(v, 1); }, xy);
  CHECK(g(0) == doctest::Approx(5.0));
  CHECK(g(1) == doctest::Approx(2.0));
}

TEST_CASE("disconnected inputs get zero gradient") {
  ad::Tape tape;
  const ad::Dense a = tape.variable(Matrix(Matrix::Ones(2, 1)));
  const ad::Dense b = tape.variable(Matrix(Matrix::Ones(3, 1)));
  const ad::Real out = ad::sum(a) * 2.0;
  const ad::Dense in[] = {a, b};
  const Vector g = ad::gradient(tape, out, in);
  REQUIRE(g.size() == 5);
  CHECK(g.head(2).isApprox(Vector::Constant(2, 2.0)));
  CHECK(g.tail(3).isZero());
}

TEST_CASE("elementary operations match finite differences") {
  std::mt19937_64 rng(1);
  const Vector x = random_vector(4, rng, 0.5, 1.5);
  check_against_fd([](ad::Tape&, const ad::Dense& v) {
    const ad::Real a = ad::element(v, 0), b = ad::element(v, 1), c = ad::element(v, 2), d = ad::element(v, 3);
    return ad::exp(a) / b + ad::log(c) * ad::sqrt(d) - ad::lgamma(a + 1.0) + ad::logistic(b - c) +
           2.0 / (a + d) - (3.0 - c) * 0.5;
  }, x, 1e-8);
  check_against_fd([](ad::Tape&, const ad::Dense& v) {
    const ad::Dense e = ad::exp(v * 0.5);
    return ad::dot(e, ad::log(v)) + ad::squared_norm(ad::cwise_product(v, e)) + ad::min_coeff(v) +
           ad::sum(ad::segment(v, 1, 2) + ad::element(v, 0));
  }, x, 1e-8);
}

TEST_CASE("avoid_integers keeps a gap and is flat inside the band") {
  ad::Tape tape;
  const ad::Real near = ad::avoid_integers(tape.variable(1.0004), 1e-3);
  CHECK(std::abs(near.value() - 1.0) >= 1e-3 - 1e-15);
  const ad::Real far = ad::avoid_integers(tape.variable(0.7), 1e-3);
  CHECK(far.value() == 0.7);
  const Vector x = (Vector(1) << 1.0004).finished();
  const Vector g = tape_gradient([](ad::Tape&, const ad::Dense& v) {
    return ad::avoid_integers(ad::element(v, 0), 1e-3);
  }, x);
  CHECK(g(0) == 0.0);
}

TEST_CASE("anisotropy tensor entries match finite differences and have unit determinant") {
  std::mt19937_64 rng(2);
  const Vector x = random_vector(6, rng);
  check_against_fd([](ad::Tape&, const ad::Dense& v) {
    const ad::TensorEntries h = ad::aniso_tensor(ad::segment(v, 0, 3), ad::segment(v, 3, 3));
    return ad::sum(h.h11) + 2.0 * ad::sum(ad::cwise_product(h.h12, h.h22)) + ad::squared_norm(h.h22);
  }, x, 1e-8);
  ad::Tape tape;
  const ad::TensorEntries h = ad::aniso_tensor(tape.constant(Matrix(x.head(3))), tape.constant(Matrix(x.tail(3))));
  for (Index i = 0; i < 3; ++i) {
    const double det = h.h11.value()(i) * h.h22.value()(i) - h.h12.value()(i) * h.h12.value()(i);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("solve adjoints on hand-computed examples") {
  // A = diag(2), B = [4], C = [2], C_bar = [1].
  SparseMatrix a = sparse_diagonal(Vector::Constant(1, 2.0));
  CholFactor f = cholesky(a);
  const SolveAdjoints adj = vjp_sparse_solve(a, f, Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0));
  CHECK(adj.b_bar(0, 0) == doctest::Approx(0.5));
  CHECK(adj.a_bar.coeff(0, 0) == doctest::Approx(-1.0));

  // A = I: B_bar = C_bar and A_bar is -C_bar C^T on the diagonal.
  SparseMatrix id = sparse_identity(3);
  CholFactor fi = cholesky(id);
  Matrix c(3, 1), cb(3, 1);
  c << 1, 2, 3;
  cb << 0.5, -1, 2;
  const SolveAdjoints ai = vjp_sparse_solve(id, fi, c, cb);
  CHECK(ai.b_bar.isApprox(cb));
  CHECK(same_pattern(ai.a_bar, id));
  for (Index i = 0; i < 3; ++i) CHECK(ai.a_bar.coeff(i, i) == doctest::Approx(-cb(i) * c(i)));
}

TEST_CASE("log-determinant adjoints on hand-computed examples") {
  Vector d(2);
  d << 2, 4;
  SparseMatrix a = sparse_diagonal(d);
  MaskedAdjoint g = vjp_sparse_logdet(a, cholesky(a), 1.0);
  CHECK(g.coeff(0, 0) == doctest::Approx(0.5));
  CHECK(g.coeff(1, 1) == doctest::Approx(0.25));

  Matrix m(2, 2);
  m << 2, 1, 1, 2;
  SparseMatrix b = m.sparseView();
  MaskedAdjoint h = vjp_sparse_logdet(b, cholesky(b), 2.0);
  Matrix expect(2, 2);
  expect << 2, -1, -1, 2;
  CHECK((Matrix(h) - expect * (2.0 / 3.0)).norm() < 1e-14);
}

TEST_CASE("product adjoints on hand-computed examples") {
  SparseMatrix a = sparse_diagonal(Vector::Constant(1, 3.0));
  SparseMatrix b = sparse_diagonal(Vector::Constant(1, 5.0));
  const ProductAdjoints p = vjp_sparse_matmul(a, b, sparse_diagonal(Vector::Ones(1)));
  CHECK(p.a_bar.coeff(0, 0) == doctest::Approx(5.0));
  CHECK(p.b_bar.coeff(0, 0) == doctest::Approx(3.0));

  std::mt19937_64 rng(4);
  SparseMatrix r = fixture::random_spd(5, 0.3, rng);
  SparseMatrix id = sparse_identity(5);
  SparseMatrix cbar = fixture::random_spd(5, 0.6, rng);
  const ProductAdjoints q = vjp_sparse_matmul(r, id, cbar);
  CHECK(same_pattern(q.a_bar, r));
  for (Index j = 0; j < 5; ++j)
    for (SparseMatrix::InnerIterator it(q.a_bar, j); it; ++it) CHECK(it.value() == doctest::Approx(cbar.coeff(it.row(), j)));
}

TEST_CASE("sparse tape operations match finite differences") {
  std::mt19937_64 rng(6);
  const Index n = 10;
  const SparseMatrix base = fixture::random_spd(n, 0.25, rng);
  const Vector b = random_vector(n, rng);
  const Index nnz = base.nonZeros();
  const Vector x0 = Eigen::Map<const Vector>(base.valuePtr(), nnz);

  SUBCASE("solve") {
    check_against_fd([&](ad::Tape& t, const ad::Dense& v) {
      const ad::Sparse a = symmetric(t, base, v);
      const ad::Factorized f = ad::factorize(a);
      const ad::Dense c = ad::solve(f, b);
      return ad::dot(c, ad::solve(f, Matrix(Vector::Ones(n))));
    }, x0, 1e-6);
  }
  SUBCASE("logdet") {
    check_against_fd([&](ad::Tape& t, const ad::Dense& v) {
      return ad::logdet(ad::factorize(symmetric(t, base, v)));
    }, x0, 1e-6);
  }
  SUBCASE("product and sum chain") {
    const SparseMatrix other = fixture::random_spd(n, 0.2, rng);
    const SparseMatrix d = fixture::random_spd(n, 0.1, rng);
    check_against_fd([&](ad::Tape& t, const ad::Dense& v) {
      const ad::Sparse a = ad::with_values(base, v);
      const ad::Sparse c = a * t.constant(other) + t.constant(d);
      return ad::sum(ad::spmv(c, t.constant(Matrix(Vector::Ones(n)))));
    }, x0, 1e-6);
  }
  SUBCASE("transpose, scaling, identity shift and quadratic forms") {
    check_against_fd([&](ad::Tape& t, const ad::Dense& v) {
      const ad::Sparse a = ad::with_values(base, v);
      const ad::Real s = ad::element(v, 0);
      const ad::Sparse m = ad::transpose(a) * a * s;
      const ad::Sparse k = ad::add_identity(ad::scale_rows(m, ad::exp(ad::segment(v, 0, n) * 0.1)), s);
      const ad::Dense y = t.constant(Matrix(b));
      return ad::quad_form(k, y) + ad::sum(ad::spmv_transposed(m, y));
    }, x0, 1e-6);
  }
  SUBCASE("hstack and blockdiag") {
    Matrix x(n, 2);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = std::sin(double(i));
    check_against_fd([&](ad::Tape& t, const ad::Dense& v) {
      const ad::Sparse a = symmetric(t, base, v);
      const ad::Sparse s = ad::hstack(a, x);
      const ad::Sparse q = ad::blockdiag(a, 2.0, 2) + ad::transpose(s) * s;
      const ad::Factorized f = ad::factorize(q);
      return ad::logdet(f) + ad::quad_form(q, t.constant(Matrix(Vector::Ones(n + 2))));
    }, x0, 1e-6);
  }
}

TEST_CASE("masked adjoints keep the primal pattern exactly") {
  std::mt19937_64 rng(8);
  const Index n = 12;
  const SparseMatrix base = fixture::random_spd(n, 0.2, rng);
  const SparseMatrix other = fixture::random_spd(n, 0.2, rng);
  ad::Tape tape;
  const ad::Dense v = tape.variable(Matrix(Eigen::Map<const Vector>(base.valuePtr(), base.nonZeros())));
  std::vector<ad::Sparse> nodes;
  nodes.push_back(ad::with_values(base, v));
  nodes.push_back(nodes[0] * tape.constant(other));
  nodes.push_back(ad::transpose(nodes[1]));
  nodes.push_back(nodes[1] + nodes[2]);
  nodes.push_back(ad::add_identity(nodes[3] * ad::element(v, 0), tape.constant(2.0 * double(n))));
  nodes.push_back(ad::transpose(nodes[4]) * nodes[4]);
  const ad::Factorized f = ad::factorize(nodes.back());
  const ad::Real out = ad::logdet(f) + ad::sum(ad::solve(f, Matrix(Vector::Ones(n))));
  tape.backward(out);
  for (const ad::Sparse& s : nodes) {
    REQUIRE(tape.has_adjoint(s.id()));
    CHECK(same_pattern(tape.adjoint<SparseMatrix>(s.id()), s.value()));
  }
}

TEST_CASE("repeated backward passes are bitwise identical") {
  std::mt19937_64 rng(10);
  const SparseMatrix base = fixture::random_spd(15, 0.2, rng);
  ad::Tape tape;
  const ad::Dense v = tape.variable(Matrix(Eigen::Map<const Vector>(base.valuePtr(), base.nonZeros())));
  const ad::Factorized f = ad::factorize(ad::with_values(base, v));
  const ad::Real out = ad::logdet(f) + ad::squared_norm(ad::solve(f, Matrix(Vector::Ones(15))));
  const ad::Dense in[] = {v};
  const Vector g1 = ad::gradient(tape, out, in);
  const Vector g2 = ad::gradient(tape, out, in);
  CHECK(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}

TEST_CASE("masked gradient equals the dense gradient on the stored pattern") {
  // d/dA of y^T A^{-1} y + log|A| is -A^{-1} y y^T A^{-1} + A^{-1}.
  std::mt19937_64 rng(12);
  const Index n = 20;
  const SparseMatrix base = fixture::random_spd(n, 0.15, rng);
  const Vector y = random_vector(n, rng);
  ad::Tape tape;
  const ad::Sparse a = tape.variable(base);
  const ad::Factorized f = ad::factorize(a);
  const ad::Real out = ad::dot(tape.constant(Matrix(y)), ad::solve(f, y)) + ad::logdet(f);
  tape.backward(out);
  const SparseMatrix& g = tape.adjoint<SparseMatrix>(a.id());
  const Matrix inv = Matrix(base).inverse();
  const Matrix dense_grad = -inv * y * y.transpose() * inv + inv;
  CHECK(same_pattern(g, base));
  for (Index j = 0; j < n; ++j)
    for (SparseMatrix::InnerIterator it(g, j); it; ++it)
      CHECK(oracle::relative_error(it.value(), dense_grad(it.row(), j), 1e-8) < 1e-6);
}
