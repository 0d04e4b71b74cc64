#pragma once

// Reverse-mode tape over scalars, dense matrices and sparse matrices.
//
// Every operation is recorded at matrix granularity. Sparse nodes carry
// adjoints on exactly the primal's stored pattern, so sparsity survives the
// backward sweep. Nodes that depend on no variable are constants and are
// skipped during the sweep.

#include <functional>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "fracspde/sparse.hpp"

namespace fracspde::ad {

class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const T& value() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using Real = Var<double>;
using Dense = Var<Matrix>;
using Sparse = Var<SparseMatrix>;

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  template <class T>
  Var<T> variable(T value) {
    return push(std::move(value), true, nullptr);
  }
  template <class T>
  Var<T> constant(T value) {
    return push(std::move(value), false, nullptr);
  }

  /// Records an operation. The node is active when any input is active;
  /// inactive nodes drop their backward rule.
  template <class T>
  Var<T> record(T value, std::initializer_list<int> inputs, Backward backward) {
    bool any = false;
    for (int id : inputs) any = any || nodes_[id].active;
    return push(std::move(value), any, any ? std::move(backward) : Backward{});
  }
  template <class T>
  Var<T> record(T value, std::span<const int> inputs, Backward backward) {
    bool any = false;
    for (int id : inputs) any = any || nodes_[id].active;
    return push(std::move(value), any, any ? std::move(backward) : Backward{});
  }

  template <class T>
  const T& value(int id) const {
    return std::get<T>(nodes_[id].value);
  }
  bool active(int id) const { return nodes_[id].active; }
  bool has_adjoint(int id) const {
    return !std::holds_alternative<std::monostate>(nodes_[id].adjoint);
  }

  /// Adjoint slot of node `id`, created as zeros shaped like the value.
  template <class T>
  T& adjoint(int id);

  /// One reverse sweep seeded at `output`. Clears previous adjoints first.
  void backward(const Real& output, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::variant<double, Matrix, SparseMatrix> value;
    std::variant<std::monostate, double, Matrix, SparseMatrix> adjoint;
    bool active = false;
    Backward backward;
  };

  template <class T>
  Var<T> push(T value, bool active, Backward backward) {
    nodes_.push_back(Node{std::move(value), std::monostate{}, active, std::move(backward)});
    return Var<T>(this, int(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

template <class T>
const T& Var<T>::value() const {
  return tape_->template value<T>(id_);
}

template <>
double& Tape::adjoint<double>(int id);
template <>
Matrix& Tape::adjoint<Matrix>(int id);
template <>
SparseMatrix& Tape::adjoint<SparseMatrix>(int id);

/// Gradient of a scalar output with respect to the listed dense inputs,
/// concatenated in order. Inputs the output does not reach contribute zeros.
Vector gradient(Tape& tape, const Real& output, std::span<const Dense> inputs);

// ---------------------------------------------------------------------------
// Scalar operations

Real operator+(const Real& a, const Real& b);
Real operator-(const Real& a, const Real& b);
Real operator*(const Real& a, const Real& b);
Real operator/(const Real& a, const Real& b);
Real operator+(const Real& a, double b);
Real operator+(double a, const Real& b);
Real operator-(const Real& a, double b);
Real operator-(double a, const Real& b);
Real operator/(double a, const Real& b);
Real operator*(const Real& a, double b);
Real operator*(double a, const Real& b);
Real operator-(const Real& a);
Real exp(const Real& a);
Real log(const Real& a);
Real sqrt(const Real& a);
Real lgamma(const Real& a);
/// 1 / (1 + exp(-a)).
Real logistic(const Real& a);
/// Keeps `a` at least `half_width` away from every integer; inside the
/// excluded band the output is constant (zero derivative).
Real avoid_integers(const Real& a, double half_width);

// ---------------------------------------------------------------------------
// Dense operations (vectors are n x 1 matrices)

Real element(const Dense& x, Index i);
Dense segment(const Dense& x, Index start, Index length);
Dense concat(std::span<const Real> parts);
Dense operator+(const Dense& a, const Dense& b);
Dense operator-(const Dense& a, const Dense& b);
Dense operator-(const Matrix& a, const Dense& b);
/// Elementwise product.
Dense cwise_product(const Dense& a, const Dense& b);
Dense operator*(const Dense& x, const Real& s);
Dense operator*(const Dense& x, double s);
/// Adds a scalar to every entry.
Dense operator+(const Dense& x, const Real& s);
Dense exp(const Dense& x);
Dense log(const Dense& x);
/// Constant matrix times a variable.
Dense matmul(const Matrix& m, const Dense& x);
Dense matmul(const SparseMatrix& m, const Dense& x);
Real sum(const Dense& x);
Real dot(const Dense& a, const Dense& b);
Real squared_norm(const Dense& x);
Real min_coeff(const Dense& x);

/// Per-point entries (h11, h12, h22) of the determinant-one tensor
/// cosh|v| I + sinh|v|/|v| [[vx, vy], [vy, -vx]].
struct TensorEntries {
  Dense h11, h12, h22;
};
TensorEntries aniso_tensor(const Dense& vx, const Dense& vy);

// ---------------------------------------------------------------------------
// Sparse operations

/// Sparse matrix with `pattern`'s structure and the given values (aligned
/// with the compressed value array).
Sparse with_values(const SparseMatrix& pattern, const Dense& values);
/// Structural product A B.
Sparse operator*(const Sparse& a, const Sparse& b);
/// Union-pattern sum.
Sparse operator+(const Sparse& a, const Sparse& b);
Sparse operator*(const Sparse& a, const Real& s);
Sparse transpose(const Sparse& a);
/// diag(d) A.
Sparse scale_rows(const Sparse& a, const Dense& d);
Sparse scale_rows(const Vector& d, const Sparse& a);
/// A + s I on the union pattern.
Sparse add_identity(const Sparse& a, const Real& s);
/// [A, X] with X a constant dense block stored sparse.
Sparse hstack(const Sparse& a, const Matrix& x);
/// blockdiag(A, tau I_p).
Sparse blockdiag(const Sparse& a, double tau, Index p);
Dense spmv(const Sparse& a, const Dense& x);
/// A^T x.
Dense spmv_transposed(const Sparse& a, const Dense& x);
Dense spmv_transposed(const Sparse& a, const Matrix& x);
/// sum over columns c of x_c^T A x_c.
Real quad_form(const Sparse& a, const Dense& x);

/// Symmetric positive-definite matrix together with its factor.
struct Factorized {
  Sparse matrix;
  std::shared_ptr<const CholFactor> factor;
};

/// Factorizes the value of `a`, reusing `symbolic` when the pattern matches
/// and replacing it otherwise.
Factorized factorize(const Sparse& a, std::shared_ptr<const CholeskySymbolic>* symbolic = nullptr);
Dense solve(const Factorized& a, const Dense& b);
Dense solve(const Factorized& a, const Matrix& b);
Real logdet(const Factorized& a);

}  // namespace fracspde::ad
