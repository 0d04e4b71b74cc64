#include "fracspde/fem.hpp"

#include <algorithm>

#include "fracspde/fields.hpp"

namespace fracspde {

Vector lumped_mass_diagonal(const TriMesh& mesh, const Vector& f_at_centroids) {
  if (f_at_centroids.size() != mesh.num_triangles())
    throw DimensionError("lumped_mass: one weight per triangle required");
  Vector d = Vector::Zero(mesh.num_vertices());
  for (Index t = 0; t < mesh.num_triangles(); ++t) {
    const double w = f_at_centroids(t) * mesh.areas()(t) / 3.0;
    for (int i : mesh.triangles()[t]) d(i) += w;
  }
  return d;
}

SparseMatrix lumped_mass(const TriMesh& mesh, const Vector& f_at_centroids) {
  return sparse_diagonal(lumped_mass_diagonal(mesh, f_at_centroids));
}

TensorField identity_tensor(const TriMesh& mesh) {
  const Index nt = mesh.num_triangles();
  return {Vector::Ones(nt), Vector::Zero(nt), Vector::Ones(nt)};
}

TensorField tensor_from_v(const Vector& vx, const Vector& vy) {
  if (vx.size() != vy.size()) throw DimensionError("tensor_from_v: length mismatch");
  TensorField h{Vector(vx.size()), Vector(vx.size()), Vector(vx.size())};
  for (Index t = 0; t < vx.size(); ++t) {
    const Eigen::Matrix2d m = h_from_v(vx(t), vy(t));
    h.h11(t) = m(0, 0);
    h.h12(t) = m(0, 1);
    h.h22(t) = m(1, 1);
  }
  return h;
}

SparseMatrix stiffness(const TriMesh& mesh, const TensorField& h) {
  const Index nt = mesh.num_triangles();
  if (h.h11.size() != nt || h.h12.size() != nt || h.h22.size() != nt)
    throw DimensionError("stiffness: one tensor per triangle required");
  std::vector<Triplet> trip;
  trip.reserve(9 * nt);
  for (Index t = 0; t < nt; ++t) {
    const P1Gradients g = gradients_p1(mesh, t);
    Eigen::Matrix2d hm;
    hm << h.h11(t), h.h12(t), h.h12(t), h.h22(t);
    const Eigen::Matrix3d local = mesh.areas()(t) * g * hm * g.transpose();
    const Triangle& tri = mesh.triangles()[t];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(tri[a], tri[b], local(a, b));
  }
  return assemble_csc(trip, mesh.num_vertices());
}

FemMatrices assemble_fem(const TriMesh& mesh, const Vector& kappa, const Vector& tau,
                         const TensorField& h) {
  FemMatrices fem;
  fem.C = lumped_mass(mesh, Vector::Ones(mesh.num_triangles()));
  fem.C_k2 = lumped_mass(mesh, kappa.array().square().matrix());
  fem.C_t2 = lumped_mass(mesh, tau.array().square().matrix());
  fem.G = stiffness(mesh, h);
  fem.L = sparse_add(fem.C_k2, fem.G);
  return fem;
}

SparseMatrix integer_precision(const FemMatrices& fem, int beta) {
  if (beta < 1) throw std::invalid_argument("integer_precision: beta must be >= 1");
  const Vector c = fem.C.diagonal();
  const Vector ct2 = fem.C_t2.diagonal();
  SparseMatrix lt = fem.L.transpose();
  SparseMatrix q = sparse_product(lt, sparse_diagonal(ct2.cwiseInverse()) * fem.L);
  for (int b = 2; b <= beta; ++b) {
    // C^{-1} L, then L^T C^{-1} Q C^{-1} L.
    SparseMatrix cl = sparse_diagonal(c.cwiseInverse()) * fem.L;
    SparseMatrix clt = cl.transpose();
    q = sparse_product(clt, sparse_product(q, cl));
  }
  q.makeCompressed();
  return q;
}

FemStructure fem_structure(const TriMesh& mesh) {
  const Index nv = mesh.num_vertices(), nt = mesh.num_triangles();
  FemStructure s;
  {
    std::vector<Triplet> trip;
    trip.reserve(9 * nt);
    for (const Triangle& tri : mesh.triangles())
      for (int a : tri)
        for (int b : tri) trip.emplace_back(a, b, 1.0);
    s.pattern = assemble_csc(trip, nv);
  }
  auto position = [&](int row, int col) {
    const int* begin = s.pattern.innerIndexPtr() + s.pattern.outerIndexPtr()[col];
    const int* end = s.pattern.innerIndexPtr() + s.pattern.outerIndexPtr()[col + 1];
    return static_cast<int>(std::lower_bound(begin, end, row) - s.pattern.innerIndexPtr());
  };
  const Index nnz = s.pattern.nonZeros();
  std::vector<Triplet> m, t11, t12, t22, dm;
  for (Index t = 0; t < nt; ++t) {
    const P1Gradients g = gradients_p1(mesh, t);
    const double area = mesh.areas()(t);
    const Triangle& tri = mesh.triangles()[t];
    const int ti = static_cast<int>(t);
    for (int a = 0; a < 3; ++a) {
      m.emplace_back(tri[a], ti, area / 3.0);
      dm.emplace_back(position(tri[a], tri[a]), ti, area / 3.0);
      for (int b = 0; b < 3; ++b) {
        const int p = position(tri[a], tri[b]);
        t11.emplace_back(p, ti, area * g(a, 0) * g(b, 0));
        t12.emplace_back(p, ti, area * (g(a, 0) * g(b, 1) + g(a, 1) * g(b, 0)));
        t22.emplace_back(p, ti, area * g(a, 1) * g(b, 1));
      }
    }
  }
  s.mass = assemble_csc(m, nv, nt);
  s.b11 = assemble_csc(t11, nnz, nt);
  s.b12 = assemble_csc(t12, nnz, nt);
  s.b22 = assemble_csc(t22, nnz, nt);
  s.diag_mass = assemble_csc(dm, nnz, nt);
  s.c = s.mass * Vector::Ones(nt);
  return s;
}

}  // namespace fracspde
