#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "dense_oracle.hpp"
#include "fixtures.hpp"
#include "fracspde/fem.hpp"
#include "fracspde/predict.hpp"
#include "fracspde/priors.hpp"
#include "fracspde/ratapprox.hpp"
#include "fracspde/study.hpp"
#include "quadrature.hpp"

using namespace fracspde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Options {
  fs::path work = "acceptance_work";
  bool resume = false;
};

// 1. Analytic gradient against central differences.
Outcome gradient() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int evaluations = 0;
  struct Case {
    ModelClass cls;
    int side;
    Index n;
    double nu;
  };
  for (Case c : {Case{ModelClass::NfS, 4, 5, -1}, Case{ModelClass::NfS, 5, 10, -1}, Case{ModelClass::FS, 4, 10, 0.5},
                 Case{ModelClass::FS, 5, 5, 0.5}, Case{ModelClass::NfNs, 4, 10, -1}, Case{ModelClass::NfNs, 5, 5, -1},
                 Case{ModelClass::FNs, 4, 5, 0.5}, Case{ModelClass::FNs, 5, 10, 0.5}}) {
    auto mesh = fixture::small_mesh(c.side);
    const ObservationSet obs = fixture::random_observations(*mesh, c.n, rng);
    Model m(mesh, fixture::small_spec(c.cls, mesh->interest()), obs);
    for (int rep = 0; rep < 3; ++rep) {
      const Vector th = fixture::random_theta(m, rng, c.nu);
      Vector g;
      m.log_posterior(th, g);
      const Vector fd = oracle::finite_gradient([&](const Vector& t) { return m.log_posterior(t); }, th);
      for (Index i = 0; i < th.size(); ++i)
        worst = std::max(worst, std::abs(g(i) - fd(i)) / std::max(std::abs(fd(i)), 1e-3));
      ++evaluations;
    }
  }
  return {worst < 1e-5, fmt("max relative error %.2e over %d parameter vectors (tol 1e-5)", worst, evaluations)};
}

// 2. Sparse pipeline against dense marginal-density algebra.
Outcome dense_oracle() {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  Matrix loc(11, 2);
  for (Index p : {Index(0), Index(2)})
    for (ModelClass cls : {ModelClass::NfS, ModelClass::FS, ModelClass::NfNs, ModelClass::FNs}) {
      auto mesh = fixture::small_mesh(5);
      const ObservationSet obs = fixture::random_observations(*mesh, 9, rng, p);
      Model m(mesh, fixture::small_spec(cls, mesh->interest()), obs);
      for (int rep = 0; rep < 2; ++rep) {
        const Vector th = fixture::random_theta(m, rng);
        const oracle::DensePosterior d = oracle::dense_posterior(m, obs, th);
        const Posterior post = m.posterior(th);
        worst = std::max(worst, oracle::relative_error(m.log_posterior(th), d.log_posterior));
        worst = std::max(worst, oracle::max_relative_error(post.replicates[0].mu, d.mu));
        worst = std::max(worst, oracle::max_relative_error(Matrix(post.replicates[0].qc), d.Qc));

        std::uniform_real_distribution<double> u(0.0, mesh->interest().x1);
        for (Index i = 0; i < loc.size(); ++i) loc.data()[i] = u(rng);
        Matrix x(loc.rows(), p);
        for (Index i = 0; i < x.size(); ++i) x.data()[i] = std::cos(1.7 * double(i));
        const Index nv = mesh->num_vertices();
        Matrix sp(loc.rows(), nv + p);
        sp.leftCols(nv) = oracle::dense(projector(*mesh, loc)) * d.P_R;
        if (p > 0) sp.rightCols(p) = x;
        const Vector var = (sp * d.Qc.inverse() * sp.transpose()).diagonal();
        const Prediction pr = predict(post, *mesh, loc, x, Scale::Latent);
        worst = std::max(worst, oracle::max_relative_error(pr.mean, sp * d.mu));
        worst = std::max(worst, oracle::max_relative_error(pr.sd.array().square().matrix(), var));
      }
    }
  return {worst < 1e-8, fmt("max relative error %.2e on log-posterior, mean, Q_C and predictions (tol 1e-8)", worst)};
}

// 3. Sparse Cholesky kernels against dense factorizations.
Outcome sparse_kernels() {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> size(2, 50);
  std::uniform_real_distribution<double> density(0.02, 0.3);
  std::normal_distribution<double> z;
  double solve_err = 0.0, logdet_err = 0.0, inv_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index n = size(rng);
    const SparseMatrix a = fixture::random_spd(n, density(rng), rng);
    const Matrix ad = Matrix(a);
    const CholFactor f = cholesky(a);
    Matrix b(n, 3);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = z(rng);
    const Eigen::LLT<Matrix> llt(ad);
    solve_err = std::max(solve_err, oracle::max_relative_error(solve_spd(f, b), llt.solve(b)));
    logdet_err = std::max(logdet_err, oracle::relative_error(log_det_spd(f), oracle::log_det_dense(ad)));
    const SparseMatrix s = partial_inverse(f, a);
    const Matrix inv = llt.solve(Matrix::Identity(n, n));
    double scale = inv.cwiseAbs().maxCoeff(), e = 0.0;
    for (Index j = 0; j < s.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(s, j); it; ++it) e = std::max(e, std::abs(it.value() - inv(it.row(), j)));
    inv_err = std::max(inv_err, e / scale);
  }
  const double worst = std::max({solve_err, logdet_err, inv_err});
  return {worst < 1e-9, fmt("50 matrices: solve %.1e, logdet %.1e, partial inverse %.1e (tol 1e-9)", solve_err,
                            logdet_err, inv_err)};
}

// Largest |corr - exp(-kappa d)| over pairs within `dmax` of three interior
// centres.
double matern_error(const TriMesh& mesh, double kappa, double beta, int k, double dmax) {
  const Index nt = mesh.num_triangles(), nv = mesh.num_vertices();
  const FemMatrices fem = assemble_fem(mesh, Vector::Constant(nt, kappa),
                                       Vector::Constant(nt, tau_value(1.0, kappa, beta)), identity_tensor(mesh));
  const FracOperator frac = assemble_frac(fem, kappa, beta, k);
  const CholFactor factor = cholesky(frac.Qtilde);
  const SparseMatrix sel = partial_inverse(factor, frac.Qtilde);
  const SparseMatrix prt = frac.P_R.transpose();
  Vector var(nv);
  for (Index j = 0; j < nv; ++j) {
    double v = 0.0;
    for (SparseMatrix::InnerIterator a(prt, j); a; ++a)
      for (SparseMatrix::InnerIterator b(prt, j); b; ++b) v += a.value() * b.value() * sel.coeff(a.row(), b.row());
    var(j) = v;
  }
  const Matrix& v = mesh.vertices();
  double worst = 0.0;
  for (auto [cx, cy] : {std::pair{10.0, 10.0}, std::pair{7.0, 13.0}, std::pair{12.5, 8.0}}) {
    Index c = 0;
    double best = 1e300;
    for (Index i = 0; i < nv; ++i) {
      const double d = std::hypot(v(i, 0) - cx, v(i, 1) - cy);
      if (d < best) best = d, c = i;
    }
    Matrix e = Matrix::Zero(nv, 1);
    e(c) = 1.0;
    const Vector cov = frac.P_R * factor.solve(prt * e);
    for (Index j = 0; j < nv; ++j) {
      const double d = (v.row(j) - v.row(c)).norm();
      if (d > dmax) continue;
      worst = std::max(worst, std::abs(cov(j) / std::sqrt(var(c) * var(j)) - std::exp(-kappa * d)));
    }
  }
  return worst;
}

// 4. Exponential covariance at nu = 1/2.
Outcome matern_limit() {
  const double rho0 = 10.0, nu = 0.5, beta = (nu + 1.0) / 2.0;
  const double kappa = std::sqrt(8.0 * nu) / rho0;
  const TriMesh mesh = build_rect_mesh(Rect{0, 20, 0, 20}, 20.0, 0.75);
  const double err3 = matern_error(mesh, kappa, beta, 3, 1.5 * rho0);
  const double err1 = matern_error(mesh, kappa, beta, 1, 1.5 * rho0);
  return {err3 < 0.05, fmt("%ld vertices, order 3: max |corr - exp(-kappa d)| = %.4f (tol 0.05); order 1: %.4f",
                           long(mesh.num_vertices()), err3, err1)};
}

// 5. Rational approximation quality and the integer path.
Outcome rational() {
  bool monotone = true;
  std::ostringstream errs;
  for (double beta : {0.6, 0.75, 1.25, 1.5}) {
    double prev = INFINITY;
    errs << " b" << beta << ":";
    for (int k = 1; k <= 4; ++k) {
      const double e = cheb_pade(beta, k).sup_error;
      errs << fmt(" %.1e", e);
      monotone = monotone && e < prev;
      prev = e;
    }
  }
  auto mesh = fixture::small_mesh(6);
  const Index nt = mesh->num_triangles();
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Vector kappa(nt), tau(nt);
  for (Index t = 0; t < nt; ++t) kappa(t) = u(rng), tau(t) = u(rng);
  const FemMatrices fem = assemble_fem(*mesh, kappa, tau, identity_tensor(*mesh));
  double int_err = 0.0;
  for (int beta : {1, 2}) {
    const FracOperator frac = assemble_frac(fem, kappa.minCoeff(), double(beta), 1);
    int_err = std::max(int_err, oracle::max_relative_error(Matrix(frac.Qtilde), Matrix(integer_precision(fem, beta))));
  }
  return {monotone && int_err < 1e-10,
          fmt("sup errors k=1..4%s %s; integer path error %.1e (tol 1e-10)", errs.str().c_str(),
              monotone ? "decrease" : "NOT monotone", int_err)};
}

// 6. Prior calibration.
Outcome priors() {
  PriorInputs in;
  const PriorConfig c = derive_hyper(in);
  std::mt19937_64 rng(106);
  std::normal_distribution<double> z(0.0, c.sigma_v);
  const int n = 200000;
  int above = 0;
  for (int i = 0; i < n; ++i)
    if (std::exp(std::hypot(z(rng), z(rng))) > in.C_a) ++above;
  const double pa = double(above) / n;
  const bool a_ok = std::abs(pa - 0.05) < 0.005;

  double mean_err = 0.0, hpd_err = 0.0;
  for (auto [cnu, hpd] : {std::pair{1.0, 1.8}, std::pair{0.6, 1.0}, std::pair{1.3, 1.2}}) {
    PriorInputs pin;
    pin.C_nu = cnu;
    pin.C_nu_hpd = hpd;
    const PriorConfig pc = derive_hyper(pin);
    const double lb = std::lgamma(pc.p) + std::lgamma(pc.q) - std::lgamma(pc.p + pc.q);
    const double mean = pin.nu_max * boost::math::quadrature::tanh_sinh<double>().integrate(
                                         [&](double u) {
                                           return u * std::exp((pc.p - 1) * std::log(u) + (pc.q - 1) * std::log1p(-u) - lb);
                                         },
                                         0.0, 1.0);
    mean_err = std::max(mean_err, std::abs(mean - cnu));
    hpd_err = std::max(hpd_err, std::abs(oracle::hpd_width_by_levels(pc.p, pc.q) * pin.nu_max - hpd));
  }
  const bool b_ok = mean_err < 1e-8 && hpd_err < 1e-4;

  double worst_p = 0.0;
  for (int basis : {8, 16})
    for (double cns : {2.0, 10.0}) {
      const BasisSpec spec = basis_for_count(basis, Rect{0, 20, 0, 20});
      for (PenaltyTarget t : {PenaltyTarget::Range, PenaltyTarget::Sigma, PenaltyTarget::Anisotropy}) {
        std::mt19937_64 cal(1000 + basis);
        const double tau = calibrate_penalty(t, cns, spec, cal);
        std::mt19937_64 fresh(2000 + basis);
        const double p = exceedance_probability(t, cns, tau, spec, 25, 10000, fresh);
        worst_p = std::max(worst_p, std::abs(p - 0.05));
      }
    }
  const bool c_ok = worst_p < 0.01;
  return {a_ok && b_ok && c_ok,
          fmt("(a) P(a > C_a) = %.4f (0.05 +- 0.005); (b) mean err %.1e (1e-8), HPD err %.1e (1e-4); "
              "(c) max |p - 0.05| = %.4f over 12 calibrations (0.01)",
              pa, mean_err, hpd_err, worst_p)};
}

// 7 and 8 share one study at 500 observations.
std::vector<StudyRow> desk_rows(const Options& opt) {
  static std::vector<StudyRow> rows;
  if (!rows.empty()) return rows;
  StudyConfig c = StudyConfig::desk();
  c.n_obs = {500};
  const Study study(c);
  fs::create_directories(opt.work);
  const fs::path results = opt.work / "desk_results.csv";
  if (!opt.resume) fs::remove(results);
  std::cerr << "desk study: " << study.mesh().num_vertices() << " vertices, results in " << results << "\n";
  rows = run_study(study, results.string(), (opt.work / "desk_timing.csv").string(), &std::cerr);
  std::ofstream summary(opt.work / "desk_summary.csv");
  write_summary(summary, summarize(rows));
  std::ofstream bias(opt.work / "desk_bias.txt");
  write_bias_table(bias, estimate_bias(rows));
  return rows;
}

Outcome study_ordering(const Options& opt) {
  const auto rows = desk_rows(opt);
  double rmse[2] = {0, 0}, crps[2] = {0, 0};
  int count[2] = {0, 0}, failed = 0;
  for (const auto& r : rows) {
    if (r.generator != "nonstationary") continue;
    if (r.status != "ok") {
      ++failed;
      continue;
    }
    const int ns = r.candidate.find("-NS") != std::string::npos;
    rmse[ns] += r.rmse;
    crps[ns] += r.crps;
    ++count[ns];
  }
  if (count[0] == 0 || count[1] == 0) return {false, "no successful fits"};
  for (int i = 0; i < 2; ++i) rmse[i] /= count[i], crps[i] /= count[i];
  return {failed == 0 && rmse[1] < rmse[0] && crps[1] < crps[0],
          fmt("non-stationary generator, 500 obs: RMSE NS %.5f vs S %.5f, CRPS NS %.5f vs S %.5f (%d+%d fits, %d "
              "failed)",
              rmse[1], rmse[0], crps[1], crps[0], count[1], count[0], failed)};
}

Outcome smoothness(const Options& opt) {
  const auto rows = desk_rows(opt);
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.generator == "stationary" && r.candidate == "F-S" && r.status == "ok") sum += r.nu, ++n;
  if (n == 0) return {false, "no successful F-S fits"};
  const double mean = sum / n;
  return {mean >= 0.1 && mean <= 0.9, fmt("F-S mean nu over %d replicates = %.3f (range [0.1, 0.9])", n, mean)};
}

// 9. CRPS closed form.
Outcome crps() {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> m(-3, 3), s(0.05, 4), y(-6, 6);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double mm = m(rng), ss = s(rng), yy = y(rng);
    worst = std::max(worst, std::abs(crps_gaussian(mm, ss, yy) - oracle::crps_by_quadrature(mm, ss, yy)));
  }
  const double z0 = crps_gaussian(0.0, 1.0, 0.0);
  return {worst < 1e-6 && std::abs(z0 - 0.23370) < 1e-5,
          fmt("max |closed - quadrature| = %.1e over 100 triples (1e-6); CRPS(0; 0, 1) = %.6f", worst, z0)};
}

// 10. Byte-identical study output.
Outcome determinism(const Options& opt) {
  StudyConfig c = StudyConfig::desk();
  c.mesh_h = 3.0;
  c.grid = 40;
  c.replicates = 2;
  c.n_obs = {60, 120};
  c.adam.max_iterations = 40;
  c.threads = 1;
  fs::create_directories(opt.work);
  std::string text[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path p = opt.work / fmt("determinism_%d.csv", run);
    fs::remove(p);
    const Study study(c);
    run_study(study, p.string());
    std::ifstream in(p, std::ios::binary);
    text[run].assign(std::istreambuf_iterator<char>(in), {});
  }
  const bool same = !text[0].empty() && text[0] == text[1];
  const auto lines = std::count(text[0].begin(), text[0].end(), '\n');
  return {same, fmt("two runs of a %ld-row study are %s", long(lines - 1), same ? "byte-identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::vector<int> only;
  CLI::App app{"Acceptance checks"};
  app.add_option("--work", opt.work, "Directory for study outputs");
  app.add_flag("--resume", opt.resume, "Keep rows already in the study results file");
  app.add_option("--only", only, "Criteria to run")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"gradient", gradient},
      {"dense oracle", dense_oracle},
      {"sparse kernels", sparse_kernels},
      {"matern limit", matern_limit},
      {"rational approximation", rational},
      {"prior calibration", priors},
      {"study ordering", [&] { return study_ordering(opt); }},
      {"smoothness recovery", [&] { return smoothness(opt); }},
      {"crps", crps},
      {"determinism", [&] { return determinism(opt); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << checks[i].first << ": " << o.detail
              << fmt(" [%.1fs]", secs) << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
