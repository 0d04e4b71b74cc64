#pragma once

#include "fracspde/mesh.hpp"

namespace fracspde {

/// Diagonal of the lumped mass matrix weighted by f at triangle centroids:
/// entry i is the sum over triangles touching vertex i of f(s_T) area(T)/3.
Vector lumped_mass_diagonal(const TriMesh& mesh, const Vector& f_at_centroids);
SparseMatrix lumped_mass(const TriMesh& mesh, const Vector& f_at_centroids);

/// Per-triangle entries of the symmetric tensor H(s_T).
struct TensorField {
  Vector h11, h12, h22;
};

/// Isotropic H = I at every triangle.
TensorField identity_tensor(const TriMesh& mesh);
/// H(v) at every centroid.
TensorField tensor_from_v(const Vector& vx, const Vector& vy);

/// G_ij = sum_T area(T) grad(phi_i)^T H(s_T) grad(phi_j).
SparseMatrix stiffness(const TriMesh& mesh, const TensorField& h);

struct FemMatrices {
  SparseMatrix C, C_k2, C_t2, G, L;
};

/// C, C_{kappa^2}, C_{tau^2}, G and L = C_{kappa^2} + G from coefficient
/// values at the centroids.
FemMatrices assemble_fem(const TriMesh& mesh, const Vector& kappa, const Vector& tau,
                         const TensorField& h);

/// Q_1 = L^T C_{tau^2}^{-1} L and Q_b = L^T C^{-1} Q_{b-1} C^{-1} L.
SparseMatrix integer_precision(const FemMatrices& fem, int beta);

/// Linear maps from centroid coefficient values to the value arrays of G and
/// L, sharing the vertex-adjacency pattern. Used to assemble on the tape.
struct FemStructure {
  /// Vertex adjacency including the diagonal; pattern of G and L.
  SparseMatrix pattern;
  /// vertices x triangles, entries area/3: diag(C_f) = mass * f.
  SparseMatrix mass;
  /// nnz(pattern) x triangles maps: values(G) = b11 h11 + b12 h12 + b22 h22.
  SparseMatrix b11, b12, b22;
  /// nnz(pattern) x triangles: values(C_{kappa^2}) embedded in the pattern.
  SparseMatrix diag_mass;
  /// Lumped mass diagonal with f = 1.
  Vector c;
};

FemStructure fem_structure(const TriMesh& mesh);

}  // namespace fracspde
