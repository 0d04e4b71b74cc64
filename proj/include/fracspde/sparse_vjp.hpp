#pragma once

#include "fracspde/sparse.hpp"

namespace fracspde {

/// Adjoint of a sparse matrix restricted to the primal's stored pattern.
/// The pattern is always identical to the primal's, zeros included.
using MaskedAdjoint = SparseMatrix;

struct SolveAdjoints {
  MaskedAdjoint a_bar;
  Matrix b_bar;
};

/// Reverse rule for C = A^{-1} B with A symmetric:
/// B_bar = A^{-T} C_bar and A_bar = (-B_bar C^T) masked to A.
SolveAdjoints vjp_sparse_solve(const SparseMatrix& a, const CholFactor& factor, const Matrix& c,
                               const Matrix& c_bar);

/// Reverse rule for c = log|A|: A_bar = c_bar (A^{-T} masked to A), with
/// the masked inverse taken from the factor's selected inverse.
MaskedAdjoint vjp_sparse_logdet(const SparseMatrix& a, const CholFactor& factor, double c_bar);

struct ProductAdjoints {
  MaskedAdjoint a_bar;
  MaskedAdjoint b_bar;
};

/// Reverse rule for C = A B: A_bar = C_bar B^T and B_bar = A^T C_bar, each
/// restricted to its operand's pattern.
ProductAdjoints vjp_sparse_matmul(const SparseMatrix& a, const SparseMatrix& b,
                                  const SparseMatrix& c_bar);

/// Reverse rule for C = alpha A + beta B on the union pattern.
ProductAdjoints vjp_sparse_add(const SparseMatrix& a, const SparseMatrix& b,
                               const SparseMatrix& c_bar, double alpha = 1.0, double beta = 1.0);

/// Values of `dense` at the stored positions of `mask`.
MaskedAdjoint restrict_to(const Matrix& dense, const SparseMatrix& mask);

}  // namespace fracspde
