#include "fracspde/sparse_vjp.hpp"

namespace fracspde {

namespace {

// Gathers the values of `src` at every stored position of `mask`; positions
// absent from `src` read as zero.
MaskedAdjoint gather(const SparseMatrix& src, const SparseMatrix& mask, double scale) {
  MaskedAdjoint out = zero_like(mask);
  for (Index j = 0; j < mask.cols(); ++j) {
    SparseMatrix::InnerIterator sit(src, j);
    for (SparseMatrix::InnerIterator oit(out, j); oit; ++oit) {
      while (sit && sit.index() < oit.index()) ++sit;
      if (sit && sit.index() == oit.index()) oit.valueRef() = scale * sit.value();
    }
  }
  return out;
}

}  // namespace

MaskedAdjoint restrict_to(const Matrix& dense, const SparseMatrix& mask) {
  if (dense.rows() != mask.rows() || dense.cols() != mask.cols())
    throw DimensionError("restrict_to: dimension mismatch");
  MaskedAdjoint out = zero_like(mask);
  for (Index j = 0; j < out.cols(); ++j)
    for (SparseMatrix::InnerIterator it(out, j); it; ++it) it.valueRef() = dense(it.index(), j);
  return out;
}

SolveAdjoints vjp_sparse_solve(const SparseMatrix& a, const CholFactor& factor, const Matrix& c,
                               const Matrix& c_bar) {
  if (c.rows() != a.rows() || c_bar.rows() != a.rows() || c.cols() != c_bar.cols() ||
      factor.size() != a.rows())
    throw DimensionError("vjp_sparse_solve: dimension mismatch");
  SolveAdjoints out;
  out.b_bar = factor.solve(c_bar);
  out.a_bar = zero_like(a);
  for (Index j = 0; j < a.cols(); ++j)
    for (SparseMatrix::InnerIterator it(out.a_bar, j); it; ++it)
      it.valueRef() = -out.b_bar.row(it.index()).dot(c.row(j));
  return out;
}

MaskedAdjoint vjp_sparse_logdet(const SparseMatrix& a, const CholFactor& factor, double c_bar) {
  MaskedAdjoint out = partial_inverse(factor, a);
  for (Index k = 0; k < out.nonZeros(); ++k) out.valuePtr()[k] *= c_bar;
  return out;
}

ProductAdjoints vjp_sparse_matmul(const SparseMatrix& a, const SparseMatrix& b,
                                  const SparseMatrix& c_bar) {
  if (a.cols() != b.rows() || c_bar.rows() != a.rows() || c_bar.cols() != b.cols())
    throw DimensionError("vjp_sparse_matmul: dimension mismatch");
  ProductAdjoints out{zero_like(a), zero_like(b)};
  const SparseMatrix bt = b.transpose();
  const SparseMatrix at = a.transpose();
  masked_product(c_bar, bt, out.a_bar);
  masked_product(at, c_bar, out.b_bar);
  return out;
}

ProductAdjoints vjp_sparse_add(const SparseMatrix& a, const SparseMatrix& b,
                               const SparseMatrix& c_bar, double alpha, double beta) {
  return {gather(c_bar, a, alpha), gather(c_bar, b, beta)};
}

}  // namespace fracspde
