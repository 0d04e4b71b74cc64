#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "fracspde/mesh.hpp"

using namespace fracspde;

namespace {

TriMesh single_triangle(double scale) {
  Matrix v(3, 2);
  v << 0, 0, scale, 0, 0, scale;
  return TriMesh(v, {Triangle{0, 1, 2}}, Rect{0, scale, 0, scale}, 0.0);
}

}  // namespace

TEST_CASE("minimal structured meshes") {
  TriMesh a = build_rect_mesh(Rect{0, 1, 0, 1}, 0.0, 1.0);
  CHECK(a.num_vertices() == 4);
  CHECK(a.num_triangles() == 2);
  TriMesh b = build_rect_mesh(Rect{0, 1, 0, 1}, 0.0, 0.5);
  CHECK(b.num_vertices() == 9);
  CHECK(b.num_triangles() == 8);
  CHECK_THROWS(build_rect_mesh(Rect{0, 1, 0, 1}, 0.0, 0.0));
}

TEST_CASE("extended study mesh sizes") {
  TriMesh desk = build_rect_mesh(Rect{0, 20, 0, 20}, 20.0, 1.62);
  CHECK(desk.num_vertices() > 1000);
  CHECK(desk.num_vertices() < 2000);
  CHECK(desk.total_area() == doctest::Approx(3600.0).epsilon(1e-10));
}

TEST_CASE("mesh invariants") {
  TriMesh m = build_rect_mesh(Rect{0, 20, 0, 20}, 20.0, 4.0);
  const Matrix& v = m.vertices();
  for (Index t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles()[t];
    const double cross = (v(tri[1], 0) - v(tri[0], 0)) * (v(tri[2], 1) - v(tri[0], 1)) -
                         (v(tri[1], 1) - v(tri[0], 1)) * (v(tri[2], 0) - v(tri[0], 0));
    CHECK(cross > 0);
  }
  std::map<std::pair<int, int>, int> edges;
  for (const auto& tri : m.triangles())
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}]++;
    }
  int boundary = 0;
  for (const auto& [e, count] : edges) {
    CHECK(count <= 2);
    if (count == 1) ++boundary;
  }
  // 60x60 square with h = 4: 15 boundary edges per side.
  CHECK(boundary == 60);
  CHECK(m.total_area() == doctest::Approx(3600.0).epsilon(1e-12));
  CHECK(v.col(0).minCoeff() <= m.interest().x0);
  CHECK(v.col(0).maxCoeff() >= m.interest().x1);
}

TEST_CASE("clockwise input triangles are flipped and degenerate ones rejected") {
  Matrix v(3, 2);
  v << 0, 0, 0, 1, 1, 0;
  TriMesh m(v, {Triangle{0, 1, 2}}, Rect{0, 1, 0, 1}, 0.0);
  CHECK(m.areas()(0) == doctest::Approx(0.5));
  const P1Gradients g = gradients_p1(m, 0);
  CHECK(g.colwise().sum().norm() < 1e-14);
  Matrix w(3, 2);
  w << 0, 0, 1, 1, 2, 2;
  CHECK_THROWS_AS(TriMesh(w, {Triangle{0, 1, 2}}, Rect{0, 2, 0, 2}, 0.0), GeometryError);
}

TEST_CASE("hat function gradients") {
  TriMesh unit = single_triangle(1.0);
  P1Gradients g = gradients_p1(unit, 0);
  P1Gradients expect;
  expect << -1, -1, 1, 0, 0, 1;
  CHECK((g - expect).norm() < 1e-15);
  TriMesh twice = single_triangle(2.0);
  CHECK((gradients_p1(twice, 0) - expect / 2.0).norm() < 1e-15);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int rep = 0; rep < 50; ++rep) {
    Matrix v(3, 2);
    for (Index i = 0; i < 6; ++i) v.data()[i] = u(rng);
    TriMesh m(v, {Triangle{0, 1, 2}}, Rect{-5, 5, -5, 5}, 0.0);
    CHECK(gradients_p1(m, 0).colwise().sum().norm() < 1e-14 * std::max(1.0, gradients_p1(m, 0).norm()));
  }
}

TEST_CASE("projector rows") {
  TriMesh m = build_rect_mesh(Rect{0, 20, 0, 20}, 0.0, 2.5);
  Matrix at_vertex(1, 2);
  at_vertex << m.vertices()(7, 0), m.vertices()(7, 1);
  SparseMatrix a = projector(m, at_vertex);
  CHECK(a.coeff(0, 7) == doctest::Approx(1.0));
  CHECK(Matrix(a).row(0).sum() == doctest::Approx(1.0));
  CHECK(Matrix(a).row(0).cwiseAbs().maxCoeff() == doctest::Approx(1.0));

  Matrix centroid = m.centroids().row(3);
  SparseMatrix c = projector(m, centroid);
  for (int k : m.triangles()[3]) CHECK(c.coeff(0, k) == doctest::Approx(1.0 / 3.0));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 20);
  Matrix pts(100, 2);
  for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = u(rng);
  SparseMatrix p = projector(m, pts);
  const Matrix pd = Matrix(p);
  for (Index i = 0; i < 100; ++i) {
    CHECK(std::abs(pd.row(i).sum() - 1.0) < 1e-12);
    CHECK((pd.row(i).array() != 0.0).count() <= 3);
    // Barycentric weights reproduce the point itself.
    CHECK((pd.row(i) * m.vertices() - pts.row(i)).norm() < 1e-12);
  }

  Matrix outside(1, 2);
  outside << 25.0, 1.0;
  CHECK_THROWS_AS(projector(m, outside), OutsideMeshError);
}

TEST_CASE("mesh files round-trip exactly") {
  TriMesh m = build_rect_mesh(Rect{0, 20, 0, 20}, 3.3, 2.7);
  std::ostringstream os;
  save_mesh(os, m);
  std::istringstream is(os.str());
  TriMesh r = load_mesh(is);
  CHECK(r.vertices() == m.vertices());
  CHECK(r.triangles() == m.triangles());
  CHECK(r.interest().x0 == m.interest().x0);
  CHECK(r.interest().y1 == m.interest().y1);
  CHECK(r.extension() == m.extension());
  std::ostringstream again;
  save_mesh(again, r);
  CHECK(again.str() == os.str());

  std::istringstream minimal("vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2\n");
  TriMesh s = load_mesh(minimal);
  CHECK(s.num_triangles() == 1);
  CHECK(s.interest().x1 == 1.0);

  std::istringstream broken("vertices 3\n0 0\n1 0\n");
  CHECK_THROWS_AS(load_mesh(broken), InputError);
}
