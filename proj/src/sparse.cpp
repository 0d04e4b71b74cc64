#include "fracspde/sparse.hpp"

#include <Eigen/OrderingMethods>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace fracspde {

SparseMatrix assemble_csc(std::span<const Triplet> triplets, Index rows, Index cols) {
  for (const auto& t : triplets) {
    if (t.row() < 0 || t.row() >= rows || t.col() < 0 || t.col() >= cols) {
      std::ostringstream msg;
      msg << "assemble_csc: entry (" << t.row() << ", " << t.col() << ") outside " << rows
          << "x" << cols;
      throw DimensionError(msg.str());
    }
  }
  SparseMatrix m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

SparseMatrix sparse_identity(Index n) {
  SparseMatrix m(n, n);
  m.setIdentity();
  m.makeCompressed();
  return m;
}

SparseMatrix sparse_diagonal(const Vector& d) {
  std::vector<Triplet> t;
  t.reserve(d.size());
  for (Index i = 0; i < d.size(); ++i) t.emplace_back(int(i), int(i), d[i]);
  return assemble_csc(t, d.size());
}

bool same_pattern(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.nonZeros() != b.nonZeros()) return false;
  return std::equal(a.outerIndexPtr(), a.outerIndexPtr() + a.cols() + 1, b.outerIndexPtr()) &&
         std::equal(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros(), b.innerIndexPtr());
}

bool is_structurally_symmetric(const SparseMatrix& a) {
  if (a.rows() != a.cols()) return false;
  SparseMatrix at = a.transpose();
  return same_pattern(a, at);
}

double symmetry_defect(const SparseMatrix& a) {
  SparseMatrix at = a.transpose();
  if (!same_pattern(a, at)) throw DimensionError("symmetry_defect: pattern not symmetric");
  double worst = 0.0;
  for (Index k = 0; k < a.nonZeros(); ++k)
    worst = std::max(worst, std::abs(a.valuePtr()[k] - at.valuePtr()[k]));
  return worst;
}

SparseMatrix sparse_product(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("sparse_product: inner dimensions differ");
  const Index m = a.rows(), n = b.cols();
  std::vector<int> outer(n + 1, 0), inner;
  std::vector<double> values;
  std::vector<int> mark(m, -1);
  std::vector<double> work(m, 0.0);
  std::vector<int> rows;
  inner.reserve(a.nonZeros() + b.nonZeros());
  values.reserve(a.nonZeros() + b.nonZeros());
  for (Index j = 0; j < n; ++j) {
    rows.clear();
    for (SparseMatrix::InnerIterator bit(b, j); bit; ++bit) {
      const double bkj = bit.value();
      for (SparseMatrix::InnerIterator ait(a, bit.index()); ait; ++ait) {
        const int i = ait.index();
        if (mark[i] != j) {
          mark[i] = int(j);
          work[i] = 0.0;
          rows.push_back(i);
        }
        work[i] += ait.value() * bkj;
      }
    }
    std::sort(rows.begin(), rows.end());
    for (int i : rows) {
      inner.push_back(i);
      values.push_back(work[i]);
    }
    outer[j + 1] = int(inner.size());
  }
  SparseMatrix c(m, n);
  c.resizeNonZeros(Index(inner.size()));
  std::copy(outer.begin(), outer.end(), c.outerIndexPtr());
  std::copy(inner.begin(), inner.end(), c.innerIndexPtr());
  std::copy(values.begin(), values.end(), c.valuePtr());
  return c;
}

void masked_product(const SparseMatrix& x, const SparseMatrix& y, SparseMatrix& out) {
  if (x.cols() != y.rows() || out.rows() != x.rows() || out.cols() != y.cols())
    throw DimensionError("masked_product: dimension mismatch");
  std::vector<double> work(x.rows(), 0.0);
  std::vector<int> touched;
  for (Index j = 0; j < out.cols(); ++j) {
    touched.clear();
    for (SparseMatrix::InnerIterator yit(y, j); yit; ++yit) {
      const double ykj = yit.value();
      for (SparseMatrix::InnerIterator xit(x, yit.index()); xit; ++xit) {
        work[xit.index()] += xit.value() * ykj;
        touched.push_back(xit.index());
      }
    }
    for (SparseMatrix::InnerIterator oit(out, j); oit; ++oit) oit.valueRef() = work[oit.index()];
    for (int i : touched) work[i] = 0.0;
  }
}

SparseMatrix zero_like(const SparseMatrix& a) {
  SparseMatrix z = a;
  std::fill(z.valuePtr(), z.valuePtr() + z.nonZeros(), 0.0);
  return z;
}

SparseMatrix sparse_add(const SparseMatrix& a, const SparseMatrix& b, double alpha, double beta) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sparse_add: dimension mismatch");
  // Eigen's sum keeps the structural union and does not prune.
  SparseMatrix c = alpha * a + beta * b;
  c.makeCompressed();
  return c;
}

void scatter_add(const SparseMatrix& src, SparseMatrix& dst, double scale) {
  if (src.rows() != dst.rows() || src.cols() != dst.cols())
    throw DimensionError("scatter_add: dimension mismatch");
  for (Index j = 0; j < src.cols(); ++j) {
    SparseMatrix::InnerIterator dit(dst, j);
    for (SparseMatrix::InnerIterator sit(src, j); sit; ++sit) {
      while (dit && dit.index() < sit.index()) ++dit;
      if (!dit || dit.index() != sit.index())
        throw DimensionError("scatter_add: destination pattern misses a source entry");
      dit.valueRef() += scale * sit.value();
    }
  }
}

void write_matrix_market(std::ostream& os, const SparseMatrix& a) {
  const bool symmetric = is_structurally_symmetric(a) && symmetry_defect(a) == 0.0;
  os << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general") << "\n";
  Index count = 0;
  for (Index j = 0; j < a.cols(); ++j)
    for (SparseMatrix::InnerIterator it(a, j); it; ++it)
      if (!symmetric || it.index() >= j) ++count;
  os << a.rows() << " " << a.cols() << " " << count << "\n";
  os.precision(17);
  for (Index j = 0; j < a.cols(); ++j)
    for (SparseMatrix::InnerIterator it(a, j); it; ++it)
      if (!symmetric || it.index() >= j)
        os << it.index() + 1 << " " << j + 1 << " " << it.value() << "\n";
}

// ---------------------------------------------------------------------------
// Symbolic analysis

namespace {

// Nonzero pattern of row k of L, in topological order of the elimination
// tree (descendants before ancestors). Writes into stack[top..n).
int ereach(int k, const std::vector<int>& c_outer, const std::vector<int>& c_inner,
           const std::vector<int>& parent, std::vector<int>& stack, std::vector<int>& flag) {
  const int n = int(parent.size());
  int top = n;
  flag[k] = k;
  for (int p = c_outer[k]; p < c_outer[k + 1]; ++p) {
    int i = c_inner[p];
    if (i > k) continue;
    int len = 0;
    for (; flag[i] != k; i = parent[i]) {
      stack[len++] = i;
      flag[i] = k;
    }
    while (len > 0) stack[--top] = stack[--len];
  }
  return top;
}

}  // namespace

CholeskySymbolic::CholeskySymbolic(const SparseMatrix& a) : n_(a.rows()) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: matrix not square");
  const int n = int(n_);
  a_outer_.assign(a.outerIndexPtr(), a.outerIndexPtr() + n + 1);
  a_inner_.assign(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros());

  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> amd;
  Eigen::AMDOrdering<int> ordering;
  ordering(a, amd);
  perm_.assign(amd.indices().data(), amd.indices().data() + n);
  pinv_.assign(n, 0);
  for (int k = 0; k < n; ++k) pinv_[perm_[k]] = k;

  // Upper triangle of C = P A P^T, each entry remembering its source slot.
  std::vector<int> count(n + 1, 0);
  for (int j = 0; j < n; ++j)
    for (int p = a_outer_[j]; p < a_outer_[j + 1]; ++p) {
      const int ci = pinv_[a_inner_[p]], cj = pinv_[j];
      if (ci <= cj) ++count[cj + 1];
    }
  c_outer_.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) c_outer_[j + 1] = c_outer_[j] + count[j + 1];
  c_inner_.assign(c_outer_[n], 0);
  c_source_.assign(c_outer_[n], 0);
  std::vector<int> next(c_outer_.begin(), c_outer_.end() - 1);
  for (int j = 0; j < n; ++j)
    for (int p = a_outer_[j]; p < a_outer_[j + 1]; ++p) {
      const int ci = pinv_[a_inner_[p]], cj = pinv_[j];
      if (ci <= cj) {
        c_inner_[next[cj]] = ci;
        c_source_[next[cj]] = p;
        ++next[cj];
      }
    }

  // Elimination tree (Liu's algorithm with path compression).
  parent_.assign(n, -1);
  std::vector<int> ancestor(n, -1);
  for (int k = 0; k < n; ++k) {
    for (int p = c_outer_[k]; p < c_outer_[k + 1]; ++p) {
      int i = c_inner_[p];
      while (i != -1 && i < k) {
        const int up = ancestor[i];
        ancestor[i] = k;
        if (up == -1) {
          parent_[i] = k;
          break;
        }
        i = up;
      }
    }
  }

  // Row patterns of L give column counts; keep them for the numeric phase.
  std::vector<int> stack(n), flag(n, -1), colcount(n, 1);
  reach_outer_.assign(n + 1, 0);
  reach_cols_.clear();
  for (int k = 0; k < n; ++k) {
    const int top = ereach(k, c_outer_, c_inner_, parent_, stack, flag);
    for (int t = top; t < n; ++t) {
      reach_cols_.push_back(stack[t]);
      ++colcount[stack[t]];
    }
    reach_outer_[k + 1] = int(reach_cols_.size());
  }
  l_outer_.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) l_outer_[j + 1] = l_outer_[j] + colcount[j];
  l_rows_.assign(l_outer_[n], 0);
  std::vector<int> fill(l_outer_.begin(), l_outer_.end() - 1);
  for (int k = 0; k < n; ++k) {
    l_rows_[fill[k]++] = k;
    for (int t = reach_outer_[k]; t < reach_outer_[k + 1]; ++t) l_rows_[fill[reach_cols_[t]]++] = k;
  }
}

bool CholeskySymbolic::matches(const SparseMatrix& a) const {
  if (a.rows() != n_ || a.cols() != n_ || a.nonZeros() != Index(a_inner_.size())) return false;
  return std::equal(a_outer_.begin(), a_outer_.end(), a.outerIndexPtr()) &&
         std::equal(a_inner_.begin(), a_inner_.end(), a.innerIndexPtr());
}

// ---------------------------------------------------------------------------
// Numeric factorization

CholFactor::CholFactor(std::shared_ptr<const CholeskySymbolic> symbolic, const SparseMatrix& a)
    : symbolic_(std::move(symbolic)) {
  const CholeskySymbolic& s = *symbolic_;
  if (!a.isCompressed() || !s.matches(a))
    throw DimensionError("cholesky: matrix pattern differs from the symbolic analysis");
  const int n = int(s.n_);
  const double* av = a.valuePtr();

  double max_diag = 0.0;
  for (int j = 0; j < n; ++j)
    for (int p = s.a_outer_[j]; p < s.a_outer_[j + 1]; ++p)
      if (s.a_inner_[p] == j) max_diag = std::max(max_diag, av[p]);
  const double tol = 1e-12 * max_diag;

  l_values_.assign(s.l_rows_.size(), 0.0);
  std::vector<double> x(n, 0.0);
  std::vector<int> next(n);
  log_det_ = 0.0;
  for (int k = 0; k < n; ++k) {
    for (int p = s.c_outer_[k]; p < s.c_outer_[k + 1]; ++p) x[s.c_inner_[p]] += av[s.c_source_[p]];
    double d = x[k];
    x[k] = 0.0;
    for (int t = s.reach_outer_[k]; t < s.reach_outer_[k + 1]; ++t) {
      const int j = s.reach_cols_[t];
      const double lkj = x[j] / l_values_[s.l_outer_[j]];
      x[j] = 0.0;
      for (int p = s.l_outer_[j] + 1; p < next[j]; ++p) x[s.l_rows_[p]] -= l_values_[p] * lkj;
      d -= lkj * lkj;
      l_values_[next[j]++] = lkj;
    }
    if (!(d > tol)) {
      std::ostringstream msg;
      msg << "cholesky: matrix not positive definite, pivot " << d << " at row " << s.perm_[k];
      throw NotSpdError(msg.str(), s.perm_[k], d);
    }
    const double lkk = std::sqrt(d);
    l_values_[s.l_outer_[k]] = lkk;
    next[k] = s.l_outer_[k] + 1;
    log_det_ += 2.0 * std::log(lkk);
  }
}

SparseMatrix CholFactor::matrix_l() const {
  const CholeskySymbolic& s = *symbolic_;
  SparseMatrix l(s.n_, s.n_);
  l.resizeNonZeros(Index(s.l_rows_.size()));
  std::copy(s.l_outer_.begin(), s.l_outer_.end(), l.outerIndexPtr());
  std::copy(s.l_rows_.begin(), s.l_rows_.end(), l.innerIndexPtr());
  std::copy(l_values_.begin(), l_values_.end(), l.valuePtr());
  return l;
}

void CholFactor::lower_solve(double* x) const {
  const CholeskySymbolic& s = *symbolic_;
  for (Index j = 0; j < s.n_; ++j) {
    x[j] /= l_values_[s.l_outer_[j]];
    const double xj = x[j];
    for (int p = s.l_outer_[j] + 1; p < s.l_outer_[j + 1]; ++p) x[s.l_rows_[p]] -= l_values_[p] * xj;
  }
}

void CholFactor::upper_solve(double* x) const {
  const CholeskySymbolic& s = *symbolic_;
  for (Index j = s.n_ - 1; j >= 0; --j) {
    double acc = x[j];
    for (int p = s.l_outer_[j] + 1; p < s.l_outer_[j + 1]; ++p) acc -= l_values_[p] * x[s.l_rows_[p]];
    x[j] = acc / l_values_[s.l_outer_[j]];
  }
}

Matrix CholFactor::solve(const Matrix& b) const {
  const CholeskySymbolic& s = *symbolic_;
  if (b.rows() != s.n_) throw DimensionError("solve_spd: right-hand side has wrong row count");
  Matrix out(b.rows(), b.cols());
  std::vector<double> work(s.n_);
  for (Index c = 0; c < b.cols(); ++c) {
    for (Index k = 0; k < s.n_; ++k) work[k] = b(s.perm_[k], c);
    lower_solve(work.data());
    upper_solve(work.data());
    for (Index k = 0; k < s.n_; ++k) out(s.perm_[k], c) = work[k];
  }
  return out;
}

Matrix CholFactor::solve_lt_permuted(const Matrix& z) const {
  const CholeskySymbolic& s = *symbolic_;
  if (z.rows() != s.n_) throw DimensionError("sample: draw has wrong row count");
  Matrix out(z.rows(), z.cols());
  std::vector<double> work(s.n_);
  for (Index c = 0; c < z.cols(); ++c) {
    for (Index k = 0; k < s.n_; ++k) work[k] = z(k, c);
    upper_solve(work.data());
    for (Index k = 0; k < s.n_; ++k) out(s.perm_[k], c) = work[k];
  }
  return out;
}

std::vector<double> CholFactor::selected_inverse() const {
  const CholeskySymbolic& s = *symbolic_;
  const int n = int(s.n_);
  const auto& outer = s.l_outer_;
  const auto& rows = s.l_rows_;
  std::vector<double> sigma(l_values_.size(), 0.0);
  std::vector<int> pos(n, -1);
  std::vector<double> acc;
  for (int j = n - 1; j >= 0; --j) {
    const int begin = outer[j] + 1, end = outer[j + 1];
    const double ljj = l_values_[outer[j]];
    for (int p = begin; p < end; ++p) pos[rows[p]] = p;
    acc.assign(end - begin, 0.0);
    // acc_i = sum_{k in S_j} L_kj Sigma_ki, pairs enumerated through the
    // lower-stored column min(k, i).
    for (int p = begin; p < end; ++p) {
      const int k = rows[p];
      const double lkj = l_values_[p];
      for (int q = outer[k]; q < outer[k + 1]; ++q) {
        const int r = rows[q];
        const int pr = pos[r];
        if (pr < 0) continue;
        if (r == k) {
          acc[p - begin] += lkj * sigma[q];
        } else {
          acc[pr - begin] += lkj * sigma[q];
          acc[p - begin] += l_values_[pr] * sigma[q];
        }
      }
    }
    double diag = 1.0 / ljj;
    for (int p = begin; p < end; ++p) {
      sigma[p] = -acc[p - begin] / ljj;
      diag -= l_values_[p] * sigma[p];
    }
    sigma[outer[j]] = diag / ljj;
    for (int p = begin; p < end; ++p) pos[rows[p]] = -1;
  }
  return sigma;
}

std::ptrdiff_t CholFactor::find(Index row, Index col) const {
  const CholeskySymbolic& s = *symbolic_;
  auto first = s.l_rows_.begin() + s.l_outer_[col];
  auto last = s.l_rows_.begin() + s.l_outer_[col + 1];
  auto it = std::lower_bound(first, last, int(row));
  if (it == last || *it != row) return -1;
  return it - s.l_rows_.begin();
}

double CholFactor::inverse_entry(const std::vector<double>& selected, Index i, Index j) const {
  const CholeskySymbolic& s = *symbolic_;
  const Index a = s.pinv_[i], b = s.pinv_[j];
  const std::ptrdiff_t p = find(std::max(a, b), std::min(a, b));
  if (p < 0) {
    std::ostringstream msg;
    msg << "partial_inverse: entry (" << i << ", " << j
        << ") lies outside the factor fill pattern; widen the pattern and refactor";
    throw PatternError(msg.str());
  }
  return selected[p];
}

std::shared_ptr<const CholeskySymbolic> analyze(const SparseMatrix& a) {
  if (!a.isCompressed()) {
    SparseMatrix c = a;
    c.makeCompressed();
    return std::make_shared<const CholeskySymbolic>(c);
  }
  return std::make_shared<const CholeskySymbolic>(a);
}

CholFactor cholesky(const SparseMatrix& a) { return CholFactor(analyze(a), a); }

CholFactor cholesky(const SparseMatrix& a, std::shared_ptr<const CholeskySymbolic> symbolic) {
  if (!symbolic || !symbolic->matches(a)) symbolic = analyze(a);
  return CholFactor(std::move(symbolic), a);
}

Matrix solve_spd(const CholFactor& factor, const Matrix& b) { return factor.solve(b); }

double log_det_spd(const CholFactor& factor) { return factor.log_det(); }

SparseMatrix partial_inverse(const CholFactor& factor, const SparseMatrix& pattern) {
  if (pattern.rows() != factor.size() || pattern.cols() != factor.size())
    throw DimensionError("partial_inverse: pattern has wrong dimensions");
  const std::vector<double> sigma = factor.selected_inverse();
  SparseMatrix out = pattern;
  out.makeCompressed();
  for (Index j = 0; j < out.cols(); ++j)
    for (SparseMatrix::InnerIterator it(out, j); it; ++it)
      it.valueRef() = factor.inverse_entry(sigma, it.index(), j);
  return out;
}

}  // namespace fracspde
