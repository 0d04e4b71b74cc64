#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "fracspde/errors.hpp"

namespace fracspde {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Column-compressed sparse matrix with sorted row indices. Symmetric
/// matrices are stored with both triangles.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

/// Builds a compressed matrix from coordinate entries; duplicates are summed.
SparseMatrix assemble_csc(std::span<const Triplet> triplets, Index rows, Index cols);
inline SparseMatrix assemble_csc(std::span<const Triplet> triplets, Index n) {
  return assemble_csc(triplets, n, n);
}

SparseMatrix sparse_identity(Index n);
SparseMatrix sparse_diagonal(const Vector& d);

/// True when both matrices have identical dimensions and index structure.
bool same_pattern(const SparseMatrix& a, const SparseMatrix& b);
bool is_structurally_symmetric(const SparseMatrix& a);
/// Max |A - A^T| over stored entries; requires structural symmetry.
double symmetry_defect(const SparseMatrix& a);

/// Structural product: every (i,j) reachable through a stored (i,k),(k,j)
/// pair is kept, even when the numerical value cancels to zero.
SparseMatrix sparse_product(const SparseMatrix& a, const SparseMatrix& b);

/// Overwrites the values of `out` with (X*Y) restricted to out's pattern.
void masked_product(const SparseMatrix& x, const SparseMatrix& y, SparseMatrix& out);

/// Same pattern as `a`, all values zero.
SparseMatrix zero_like(const SparseMatrix& a);

/// Union-pattern sum alpha*A + beta*B.
SparseMatrix sparse_add(const SparseMatrix& a, const SparseMatrix& b, double alpha = 1.0,
                        double beta = 1.0);

/// Adds `values` restricted to the positions of `pattern_of_src` into `dst`,
/// which must contain every position of the source.
void scatter_add(const SparseMatrix& src, SparseMatrix& dst, double scale = 1.0);

/// Writes the matrix in MatrixMarket coordinate format. Structurally
/// symmetric matrices use the `symmetric` qualifier and list the lower
/// triangle only; indices are 1-based.
void write_matrix_market(std::ostream& os, const SparseMatrix& a);

/// Fill-reducing ordering plus the structure of the Cholesky factor. Depends
/// only on the sparsity pattern, so one analysis serves every matrix with the
/// same pattern.
class CholeskySymbolic {
 public:
  explicit CholeskySymbolic(const SparseMatrix& pattern);

  Index size() const { return n_; }
  /// perm[k] is the original index of the k-th pivot.
  const std::vector<int>& permutation() const { return perm_; }
  const std::vector<int>& inverse_permutation() const { return pinv_; }
  bool matches(const SparseMatrix& a) const;
  Index factor_nonzeros() const { return static_cast<Index>(l_rows_.size()); }

 private:
  friend class CholFactor;

  Index n_ = 0;
  std::vector<int> perm_, pinv_;
  std::vector<int> parent_;
  // Input pattern, kept to validate later matrices.
  std::vector<int> a_outer_, a_inner_;
  // Upper triangle of P A P^T in CSC, with the source position in A's values.
  std::vector<int> c_outer_, c_inner_, c_source_;
  // Factor pattern (lower, CSC, diagonal first in each column).
  std::vector<int> l_outer_, l_rows_;
  // Row patterns of L excluding the diagonal, in elimination order.
  std::vector<int> reach_outer_, reach_cols_;
};

/// Sparse Cholesky factor P A P^T = L L^T.
class CholFactor {
 public:
  CholFactor(std::shared_ptr<const CholeskySymbolic> symbolic, const SparseMatrix& a);

  Index size() const { return symbolic_->n_; }
  const CholeskySymbolic& symbolic() const { return *symbolic_; }
  std::shared_ptr<const CholeskySymbolic> symbolic_ptr() const { return symbolic_; }
  const std::vector<int>& permutation() const { return symbolic_->perm_; }
  double log_det() const { return log_det_; }

  /// L in the permuted ordering.
  SparseMatrix matrix_l() const;
  /// Solves A X = B.
  Matrix solve(const Matrix& b) const;
  /// Returns P^T L^{-T} z, a draw from N(0, A^{-1}) when z ~ N(0, I).
  Matrix solve_lt_permuted(const Matrix& z) const;
  /// A^{-1} on the pattern of L (permuted ordering), aligned with L's values.
  std::vector<double> selected_inverse() const;
  /// (A^{-1})_{ij}; throws PatternError when (i,j) is outside the factor fill.
  double inverse_entry(const std::vector<double>& selected, Index i, Index j) const;

 private:
  std::shared_ptr<const CholeskySymbolic> symbolic_;
  std::vector<double> l_values_;
  double log_det_ = 0.0;

  std::ptrdiff_t find(Index row, Index col) const;
  void lower_solve(double* x) const;
  void upper_solve(double* x) const;
};

std::shared_ptr<const CholeskySymbolic> analyze(const SparseMatrix& a);
CholFactor cholesky(const SparseMatrix& a);
CholFactor cholesky(const SparseMatrix& a, std::shared_ptr<const CholeskySymbolic> symbolic);

Matrix solve_spd(const CholFactor& factor, const Matrix& b);
double log_det_spd(const CholFactor& factor);

/// Entries of A^{-1} at every stored position of `pattern`, by Takahashi
/// recursions on the factor.
SparseMatrix partial_inverse(const CholFactor& factor, const SparseMatrix& pattern);

}  // namespace fracspde
