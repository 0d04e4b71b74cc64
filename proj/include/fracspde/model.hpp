#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fracspde/fem.hpp"
#include "fracspde/fields.hpp"
#include "fracspde/priors.hpp"
#include "fracspde/ratapprox.hpp"

namespace fracspde {

/// Point observations with an optional design matrix and replicate labels.
struct ObservationSet {
  Matrix locations;  ///< n x 2
  Vector values;
  Matrix design;  ///< n x p, p may be 0
  std::vector<int> replicate;  ///< empty means all rows belong to replicate 0

  Index size() const { return values.size(); }
  Index covariates() const { return design.cols(); }
  /// The listed rows, in the given order.
  ObservationSet subset(const std::vector<Index>& rows) const;
  void validate() const;
};

enum class ModelClass { NfS, NfNs, FS, FNs };

ModelClass parse_model_class(const std::string& name);
std::string to_string(ModelClass c);
inline bool is_fractional(ModelClass c) { return c == ModelClass::FS || c == ModelClass::FNs; }
inline bool is_nonstationary(ModelClass c) {
  return c == ModelClass::NfNs || c == ModelClass::FNs;
}

struct ModelSpec {
  ModelClass cls = ModelClass::FS;
  /// Smoothness used by the non-fractional classes.
  double nu_fixed = 1.0;
  /// Basis of the non-stationary fields; ignored for stationary classes.
  BasisSpec basis;
  PriorConfig prior;
  SpectralPenalty penalty;
  int order = 1;
  double eps = 1e-4;
  double nu_clamp = 1e-3;
};

/// Positions of each block in the unconstrained parameter vector
/// [log kappa0, log sigma0, vx0, vy0, (logit nu), log sigma_n^2,
///  (alpha_kappa, alpha_sigma, alpha_vx, alpha_vy)].
struct ParamLayout {
  Index nu = -1;
  Index log_sigma_n2 = 4;
  Index alpha_kappa = -1, alpha_sigma = -1, alpha_vx = -1, alpha_vy = -1;
  Index basis = 0;
  Index size = 5;

  static ParamLayout make(bool estimate_nu, Index basis_size);
  std::vector<std::string> names() const;
};

struct NaturalParams {
  FieldParams field;
  double sigma_n2 = 1.0;
};

struct ReplicatePosterior {
  int replicate = 0;
  Index observations = 0;
  Vector mu;  ///< (weights of w~, fixed effects)
  SparseMatrix s;
  SparseMatrix qc;
  std::shared_ptr<const CholFactor> factor;
};

struct Posterior {
  NaturalParams params;
  FracOperator frac;
  Index covariates = 0;
  std::vector<ReplicatePosterior> replicates;

  const ReplicatePosterior& replicate(int id) const;
};

class Model {
 public:
  Model(std::shared_ptr<const TriMesh> mesh, ModelSpec spec, const ObservationSet& obs);

  const TriMesh& mesh() const { return *mesh_; }
  std::shared_ptr<const TriMesh> mesh_ptr() const { return mesh_; }
  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  Index covariates() const { return p_; }

  Vector pack(const NaturalParams& natural) const;
  NaturalParams unpack(const Vector& theta) const;

  /// Penalized log-posterior in the unconstrained parameterization,
  /// including the change-of-variables terms.
  double log_posterior(const Vector& theta) const;
  double log_posterior(const Vector& theta, Vector& gradient) const;
  /// Conditional moments of z | y at theta, one entry per replicate.
  Posterior posterior(const Vector& theta) const;

 private:
  struct Group {
    int replicate = 0;
    SparseMatrix a;
    Matrix x;
    Matrix y;
  };
  struct Capture;

  ad::Real build(ad::Tape& tape, const ad::Dense& theta, Capture* capture) const;
  double evaluate(const Vector& theta, Vector* gradient) const;

  std::shared_ptr<const TriMesh> mesh_;
  ModelSpec spec_;
  ParamLayout layout_;
  FemStructure fem_;
  Matrix basis_at_centroids_;
  Index p_ = 0;
  std::vector<Group> groups_;
  mutable std::shared_ptr<const CholeskySymbolic> q_symbolic_;
  mutable std::vector<std::shared_ptr<const CholeskySymbolic>> qc_symbolic_;
};

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_iterations = 2000;
  double rel_tol = 1e-4;
  /// Scales the steps of each spectral coefficient by its prior sd.
  bool prior_scaled = false;
};

struct TraceRow {
  int iteration = 0;
  double logpost = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct FitResult {
  Vector theta;
  double logpost = 0.0;
  std::vector<TraceRow> trace;
  bool converged = false;
  int iterations = 0;
  int failed_steps = 0;
  double wall_seconds = 0.0;
};

/// Per-coordinate step scale: (tau_f q_i)^-1/2 for the spectral coefficients
/// and 1 for the stationary parameters.
Vector step_scale(const Model& model);

/// Gradient ascent with Adam from `theta0`. Returns the best parameters seen.
/// Steps that land on a non-factorizable or non-finite point are retried from
/// the best point with half the step size.
FitResult fit_map(const Model& model, const Vector& theta0, const AdamOptions& opts = {},
                  const std::function<void(const TraceRow&)>& on_iteration = {});

void write_trace(std::ostream& os, const std::vector<TraceRow>& trace);

}  // namespace fracspde
