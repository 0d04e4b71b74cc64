#include "fracspde/model.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fracspde/errors.hpp"

namespace fracspde {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::string format_theta(const Vector& theta) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << '[';
  for (Index i = 0; i < theta.size(); ++i) os << (i ? ", " : "") << theta(i);
  os << ']';
  return os.str();
}

}  // namespace

ObservationSet ObservationSet::subset(const std::vector<Index>& rows) const {
  ObservationSet out;
  const Index n = static_cast<Index>(rows.size());
  out.locations.resize(n, 2);
  out.values.resize(n);
  out.design.resize(n, design.cols());
  if (!replicate.empty()) out.replicate.resize(rows.size());
  for (Index i = 0; i < n; ++i) {
    const Index r = rows[i];
    if (r < 0 || r >= size()) throw DimensionError("ObservationSet::subset: row out of range");
    out.locations.row(i) = locations.row(r);
    out.values(i) = values(r);
    if (design.cols() > 0) out.design.row(i) = design.row(r);
    if (!replicate.empty()) out.replicate[i] = replicate[r];
  }
  return out;
}

void ObservationSet::validate() const {
  const Index n = values.size();
  if (locations.rows() != n || (n > 0 && locations.cols() != 2))
    throw DimensionError("observations: locations must be n x 2");
  if (design.rows() != n && design.cols() > 0)
    throw DimensionError("observations: design matrix row count differs from n");
  if (!replicate.empty() && static_cast<Index>(replicate.size()) != n)
    throw DimensionError("observations: replicate labels differ in length from n");
  if (!values.allFinite()) throw InputError("observations: non-finite value");
  if (n > 0 && !locations.allFinite()) throw InputError("observations: non-finite location");
}

ModelClass parse_model_class(const std::string& name) {
  std::string s;
  for (char ch : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "nf-s") return ModelClass::NfS;
  if (s == "nf-ns") return ModelClass::NfNs;
  if (s == "f-s") return ModelClass::FS;
  if (s == "f-ns") return ModelClass::FNs;
  throw InputError("unknown model class '" + name + "' (expected nf-s, nf-ns, f-s or f-ns)");
}

std::string to_string(ModelClass c) {
  switch (c) {
    case ModelClass::NfS: return "NF-S";
    case ModelClass::NfNs: return "NF-NS";
    case ModelClass::FS: return "F-S";
    case ModelClass::FNs: return "F-NS";
  }
  return "?";
}

ParamLayout ParamLayout::make(bool estimate_nu, Index basis_size) {
  ParamLayout l;
  Index next = 4;
  if (estimate_nu) l.nu = next++;
  l.log_sigma_n2 = next++;
  l.basis = basis_size;
  if (basis_size > 0) {
    l.alpha_kappa = next;
    l.alpha_sigma = next + basis_size;
    l.alpha_vx = next + 2 * basis_size;
    l.alpha_vy = next + 3 * basis_size;
    next += 4 * basis_size;
  }
  l.size = next;
  return l;
}

std::vector<std::string> ParamLayout::names() const {
  std::vector<std::string> out = {"log_kappa0", "log_sigma0", "vx0", "vy0"};
  if (nu >= 0) out.push_back("logit_nu");
  out.push_back("log_sigma_n2");
  const char* blocks[4] = {"alpha_kappa", "alpha_sigma", "alpha_vx", "alpha_vy"};
  for (const char* b : blocks)
    for (Index i = 0; i < basis; ++i) out.push_back(std::string(b) + "_" + std::to_string(i));
  return out;
}

const ReplicatePosterior& Posterior::replicate(int id) const {
  for (const auto& r : replicates)
    if (r.replicate == id) return r;
  throw std::out_of_range("posterior: no replicate " + std::to_string(id));
}

Model::Model(std::shared_ptr<const TriMesh> mesh, ModelSpec spec, const ObservationSet& obs)
    : mesh_(std::move(mesh)), spec_(std::move(spec)) {
  obs.validate();
  if (!is_nonstationary(spec_.cls)) spec_.basis = BasisSpec();
  if (is_nonstationary(spec_.cls) && spec_.basis.size() == 0)
    throw std::invalid_argument("non-stationary model needs a non-empty basis");
  if (is_nonstationary(spec_.cls) && spec_.penalty.q_ns.size() != spec_.basis.size())
    spec_.penalty.q_ns = spectral_precision(spec_.basis);
  if (!is_fractional(spec_.cls) && !(spec_.nu_fixed > 0))
    throw std::invalid_argument("nu_fixed must be positive");
  if (is_fractional(spec_.cls) && spec_.prior.in.nu_max > 3.0)
    throw std::invalid_argument("nu_max must not exceed 3");

  layout_ = ParamLayout::make(is_fractional(spec_.cls), spec_.basis.size());
  fem_ = fem_structure(*mesh_);
  if (spec_.basis.size() > 0) basis_at_centroids_ = basis_eval(spec_.basis, mesh_->centroids());
  p_ = obs.covariates();

  std::map<int, std::vector<Index>> rows;
  for (Index i = 0; i < obs.size(); ++i) rows[obs.replicate.empty() ? 0 : obs.replicate[i]].push_back(i);
  if (rows.empty()) rows[0] = {};
  for (const auto& [id, idx] : rows) {
    const ObservationSet sub = obs.subset(idx);
    Group g;
    g.replicate = id;
    g.a = projector(*mesh_, sub.locations);
    g.x = sub.design;
    g.y = sub.values;
    groups_.push_back(std::move(g));
  }
  qc_symbolic_.resize(groups_.size());
}

struct Model::Capture {
  FracVars frac;
  std::vector<ReplicatePosterior> replicates;
};

ad::Real Model::build(ad::Tape& tape, const ad::Dense& th, Capture* capture) const {
  const ParamLayout& l = layout_;
  const PriorConfig& pc = spec_.prior;
  const ad::Real log_k0 = ad::element(th, 0);
  const ad::Real log_s0 = ad::element(th, 1);
  const ad::Real vx0 = ad::element(th, 2);
  const ad::Real vy0 = ad::element(th, 3);
  const ad::Real log_s2 = ad::element(th, l.log_sigma_n2);

  ad::Real nu, s_nu;
  if (l.nu >= 0) {
    s_nu = ad::logistic(ad::element(th, l.nu));
    nu = ad::avoid_integers(s_nu * pc.in.nu_max, spec_.nu_clamp);
  } else {
    nu = tape.constant(spec_.nu_fixed);
  }
  const ad::Real beta = (nu + 1.0) * 0.5;

  const Index nt = mesh_->num_triangles();
  const ad::Dense zeros = tape.constant(Matrix(Matrix::Zero(nt, 1)));
  auto field = [&](const ad::Real& base, Index offset) {
    ad::Dense f = zeros + base;
    if (offset >= 0) f = f + ad::matmul(basis_at_centroids_, ad::segment(th, offset, l.basis));
    return f;
  };
  const ad::Dense log_kappa = field(log_k0, l.alpha_kappa);
  const ad::Dense log_sigma = field(log_s0, l.alpha_sigma);
  const ad::Dense vx = field(vx0, l.alpha_vx);
  const ad::Dense vy = field(vy0, l.alpha_vy);

  const ad::TensorEntries h = ad::aniso_tensor(vx, vy);
  const ad::Dense kappa2 = ad::exp(log_kappa * 2.0);
  const ad::Real tau_const =
      (ad::lgamma(beta * 2.0) - ad::lgamma(beta * 2.0 - 1.0) + std::log(4.0 * std::numbers::pi)) * 0.5;
  const ad::Dense log_tau = log_sigma + log_kappa * (beta * 2.0 - 1.0) + tau_const;
  const ad::Dense ct2 = ad::matmul(fem_.mass, ad::exp(log_tau * 2.0));
  const ad::Dense l_values = ad::matmul(fem_.b11, h.h11) + ad::matmul(fem_.b12, h.h12) +
                             ad::matmul(fem_.b22, h.h22) + ad::matmul(fem_.diag_mass, kappa2);
  const ad::Sparse lmat = ad::with_values(fem_.pattern, l_values);
  const ad::Real kappa_min = ad::exp(ad::min_coeff(log_kappa));
  const FracVars frac = assemble_frac(lmat, fem_.c, ct2, kappa_min, beta, spec_.order, spec_.eps);
  const ad::Factorized qt = ad::factorize(frac.Qtilde, &q_symbolic_);
  const ad::Real logdet_qt = ad::logdet(qt);

  // Likelihood, one term per replicate.
  const ad::Real inv_s2 = ad::exp(-log_s2);
  const double tau_b = pc.tau_beta;
  const ad::Sparse qz = p_ > 0 ? ad::blockdiag(frac.Qtilde, tau_b, p_) : frac.Qtilde;
  const ad::Real logdet_qz = logdet_qt + static_cast<double>(p_) * std::log(tau_b);
  ad::Real total = tape.constant(0.0);
  if (capture) capture->frac = frac;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const Group& g = groups_[gi];
    const double n = static_cast<double>(g.y.rows());
    const ad::Sparse apr = tape.constant(g.a) * frac.P_R;
    const ad::Sparse s = p_ > 0 ? ad::hstack(apr, g.x) : apr;
    const ad::Sparse qc = qz + ad::transpose(s) * s * inv_s2;
    const ad::Factorized fc = ad::factorize(qc, &qc_symbolic_[gi]);
    const ad::Dense mu = ad::solve(fc, ad::spmv_transposed(s, g.y) * inv_s2);
    if (capture) {
      ReplicatePosterior rp;
      rp.replicate = g.replicate;
      rp.observations = g.y.rows();
      rp.mu = mu.value();
      rp.s = s.value();
      rp.qc = qc.value();
      rp.factor = fc.factor;
      capture->replicates.push_back(std::move(rp));
    }
    if (n == 0) continue;
    const ad::Real resid = ad::squared_norm(g.y - ad::spmv(s, mu));
    total = total + (logdet_qz - ad::logdet(fc)) * 0.5 - log_s2 * (0.5 * n) -
            ad::quad_form(qz, mu) * 0.5 - resid * inv_s2 * 0.5 - 0.5 * n * kLog2Pi;
  }

  // Priors on natural scales plus log-Jacobians of the transforms.
  const ad::Real rho = ad::sqrt(nu * 8.0) * ad::exp(-log_k0);
  total = total + log_prior_range(rho, pc) + ad::log(rho);
  total = total + log_prior_sigma(ad::exp(log_s0), pc) + log_s0;
  total = total + log_prior_v(vx0, vy0, pc);
  total = total + log_prior_sigma_n(ad::exp(log_s2 * 0.5), pc) + log_s2 * 0.5 - std::numbers::ln2;
  if (l.nu >= 0)
    total = total + log_prior_nu(nu, pc) + ad::log(s_nu) + ad::log(1.0 - s_nu) +
            std::log(pc.in.nu_max);
  if (l.basis > 0) {
    const Index offsets[4] = {l.alpha_kappa, l.alpha_sigma, l.alpha_vx, l.alpha_vy};
    const Vector& q = spec_.penalty.q_ns;
    const ad::Dense sqrt_q = tape.constant(Matrix(q.cwiseSqrt()));
    const double log_q = q.array().log().sum();
    for (int f = 0; f < 4; ++f) {
      const double tau = spec_.penalty.tau[f];
      const double nb = static_cast<double>(l.basis);
      const ad::Real quad = ad::squared_norm(ad::cwise_product(sqrt_q, ad::segment(th, offsets[f], l.basis)));
      total = total + quad * (-0.5 * tau) + (0.5 * nb * std::log(tau) + 0.5 * log_q - 0.5 * nb * kLog2Pi);
    }
  }
  return total;
}

double Model::evaluate(const Vector& theta, Vector* gradient) const {
  if (theta.size() != layout_.size) throw DimensionError("log_posterior: parameter length mismatch");
  ad::Tape tape;
  const ad::Dense th = gradient ? tape.variable(Matrix(theta)) : tape.constant(Matrix(theta));
  ad::Real out;
  try {
    out = build(tape, th, nullptr);
  } catch (const NotSpdError& e) {
    throw NotSpdError(std::string(e.what()) + " at theta = " + format_theta(theta), e.pivot(),
                      e.pivot_value());
  }
  if (gradient) {
    const ad::Dense inputs[1] = {th};
    *gradient = ad::gradient(tape, out, inputs);
  }
  return out.value();
}

double Model::log_posterior(const Vector& theta) const { return evaluate(theta, nullptr); }

double Model::log_posterior(const Vector& theta, Vector& gradient) const {
  return evaluate(theta, &gradient);
}

Vector Model::pack(const NaturalParams& nat) const {
  const FieldParams& f = nat.field;
  Vector theta = Vector::Zero(layout_.size);
  theta(0) = f.log_kappa0;
  theta(1) = f.log_sigma0;
  theta(2) = f.vx0;
  theta(3) = f.vy0;
  if (layout_.nu >= 0) {
    const double u = f.nu / spec_.prior.in.nu_max;
    if (!(u > 0 && u < 1)) throw std::invalid_argument("pack: nu outside (0, nu_max)");
    theta(layout_.nu) = std::log(u / (1.0 - u));
  }
  if (!(nat.sigma_n2 > 0)) throw std::invalid_argument("pack: noise variance must be positive");
  theta(layout_.log_sigma_n2) = std::log(nat.sigma_n2);
  const Index offsets[4] = {layout_.alpha_kappa, layout_.alpha_sigma, layout_.alpha_vx,
                            layout_.alpha_vy};
  const Vector* alphas[4] = {&f.alpha_kappa, &f.alpha_sigma, &f.alpha_vx, &f.alpha_vy};
  for (int k = 0; k < 4; ++k) {
    if (offsets[k] < 0) continue;
    if (alphas[k]->size() == 0) continue;
    if (alphas[k]->size() != layout_.basis) throw DimensionError("pack: coefficient length mismatch");
    theta.segment(offsets[k], layout_.basis) = *alphas[k];
  }
  return theta;
}

NaturalParams Model::unpack(const Vector& theta) const {
  if (theta.size() != layout_.size) throw DimensionError("unpack: parameter length mismatch");
  NaturalParams nat;
  FieldParams& f = nat.field;
  f.log_kappa0 = theta(0);
  f.log_sigma0 = theta(1);
  f.vx0 = theta(2);
  f.vy0 = theta(3);
  if (layout_.nu >= 0) {
    // Same transform as on the tape.
    ad::Tape tape;
    const ad::Real eta = tape.constant(theta(layout_.nu));
    f.nu = ad::avoid_integers(ad::logistic(eta) * spec_.prior.in.nu_max, spec_.nu_clamp).value();
  } else {
    f.nu = spec_.nu_fixed;
  }
  nat.sigma_n2 = std::exp(theta(layout_.log_sigma_n2));
  if (layout_.basis > 0) {
    f.alpha_kappa = theta.segment(layout_.alpha_kappa, layout_.basis);
    f.alpha_sigma = theta.segment(layout_.alpha_sigma, layout_.basis);
    f.alpha_vx = theta.segment(layout_.alpha_vx, layout_.basis);
    f.alpha_vy = theta.segment(layout_.alpha_vy, layout_.basis);
  }
  return nat;
}

Posterior Model::posterior(const Vector& theta) const {
  if (theta.size() != layout_.size) throw DimensionError("posterior: parameter length mismatch");
  ad::Tape tape;
  Capture cap;
  try {
    build(tape, tape.constant(Matrix(theta)), &cap);
  } catch (const NotSpdError& e) {
    throw NotSpdError(std::string(e.what()) + " at theta = " + format_theta(theta), e.pivot(),
                      e.pivot_value());
  }
  Posterior out;
  out.params = unpack(theta);
  out.covariates = p_;
  out.frac.P_L = cap.frac.P_L.value();
  out.frac.P_R = cap.frac.P_R.value();
  out.frac.Qtilde = cap.frac.Qtilde.value();
  out.frac.integer = is_integer_beta(out.params.field.beta());
  out.replicates = std::move(cap.replicates);
  return out;
}

Vector step_scale(const Model& model) {
  const ParamLayout& l = model.layout();
  Vector scale = Vector::Ones(l.size);
  if (l.basis == 0) return scale;
  const SpectralPenalty& pen = model.spec().penalty;
  const Index starts[4] = {l.alpha_kappa, l.alpha_sigma, l.alpha_vx, l.alpha_vy};
  for (int f = 0; f < 4; ++f)
    scale.segment(starts[f], l.basis) = (pen.q_ns * pen.tau[f]).cwiseSqrt().cwiseInverse();
  return scale;
}

FitResult fit_map(const Model& model, const Vector& theta0, const AdamOptions& opts,
                  const std::function<void(const TraceRow&)>& on_iteration) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  FitResult res;
  Vector theta = theta0;
  Vector grad;
  double lp = model.log_posterior(theta, grad);
  if (!std::isfinite(lp) || !grad.allFinite())
    throw std::runtime_error("fit_map: non-finite log-posterior at the initial point");

  const Index d = theta.size();
  const Vector scale = opts.prior_scaled ? step_scale(model) : Vector::Ones(d);
  Vector m = Vector::Zero(d), v = Vector::Zero(d);
  res.theta = theta;
  res.logpost = lp;
  double lr = opts.learning_rate;
  double previous = lp;
  int step = 0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    ++step;
    // Adam in the coordinates theta / scale.
    const Vector g = grad.cwiseProduct(scale);
    m = opts.beta1 * m + (1.0 - opts.beta1) * g;
    v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(opts.beta1, step);
    const double c2 = 1.0 - std::pow(opts.beta2, step);
    Vector next = theta + lr * scale.cwiseProduct(
                                   ((m / c1).array() / ((v / c2).cwiseSqrt().array() + opts.epsilon)).matrix());

    Vector next_grad;
    double next_lp;
    bool ok = true;
    try {
      next_lp = model.log_posterior(next, next_grad);
      ok = std::isfinite(next_lp) && next_grad.allFinite();
    } catch (const NotSpdError&) {
      ok = false;
    } catch (const std::runtime_error&) {
      ok = false;
    }
    res.iterations = it;
    if (!ok) {
      ++res.failed_steps;
      lr *= 0.5;
      theta = res.theta;
      grad = Vector::Zero(d);
      model.log_posterior(theta, grad);
      continue;
    }
    theta = std::move(next);
    grad = std::move(next_grad);
    lp = next_lp;
    if (lp > res.logpost) {
      res.logpost = lp;
      res.theta = theta;
    }
    TraceRow row;
    row.iteration = it;
    row.logpost = lp;
    row.grad_norm = grad.norm();
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    res.trace.push_back(row);
    if (on_iteration) on_iteration(row);
    if (std::abs(lp - previous) < opts.rel_tol * std::abs(lp)) {
      res.converged = true;
      break;
    }
    previous = lp;
  }
  res.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return res;
}

void write_trace(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "iteration,logpost,grad_norm,wall_ms\n";
  for (const auto& r : trace)
    os << r.iteration << ',' << r.logpost << ',' << r.grad_norm << ',' << r.wall_ms << '\n';
}

}  // namespace fracspde
