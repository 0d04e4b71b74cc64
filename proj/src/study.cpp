#include "fracspde/study.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "fracspde/errors.hpp"

namespace fracspde {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

std::string sanitize(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Matrix grid_points(const Rect& r, int grid) {
  Matrix pts(static_cast<Index>(grid) * grid, 2);
  for (int j = 0; j < grid; ++j)
    for (int i = 0; i < grid; ++i) {
      pts(j * grid + i, 0) = r.x0 + (i + 0.5) * r.width() / grid;
      pts(j * grid + i, 1) = r.y0 + (j + 0.5) * r.height() / grid;
    }
  return pts;
}

FieldParams generator_params(const GeneratorSpec& g) {
  FieldParams p;
  p.nu = g.nu;
  p.log_kappa0 = std::log(std::sqrt(8.0 * g.nu) / g.rho0);
  p.log_sigma0 = std::log(g.sigma0);
  p.vx0 = g.vx0;
  p.vy0 = g.vy0;
  if (g.nonstationary) {
    p.alpha_vx = g.alpha_vx;
    p.alpha_vy = g.alpha_vy;
  }
  return p;
}

struct Task {
  int generator, replicate, candidate, n_obs;
};

std::string key(const std::string& gen, const std::string& cand, int n, int rep) {
  return gen + "|" + cand + "|" + std::to_string(n) + "|" + std::to_string(rep);
}

}  // namespace

std::string CandidateSpec::label() const {
  std::string s = to_string(cls);
  if (is_nonstationary(cls)) {
    std::ostringstream os;
    os << s << " B" << basis_count << "-C" << c_ns;
    s = os.str();
  }
  return s;
}

AdamOptions study_optimizer() {
  AdamOptions o;
  o.learning_rate = 0.05;
  o.max_iterations = 500;
  o.rel_tol = 1e-5;
  o.prior_scaled = true;
  return o;
}

StudyConfig StudyConfig::desk() {
  StudyConfig c;
  GeneratorSpec st;
  st.name = "stationary";
  GeneratorSpec ns;
  ns.name = "nonstationary";
  ns.nonstationary = true;
  c.generators = {st, ns};
  for (ModelClass cls : {ModelClass::NfS, ModelClass::NfNs, ModelClass::FS, ModelClass::FNs}) {
    CandidateSpec cand;
    cand.cls = cls;
    c.candidates.push_back(cand);
  }
  return c;
}

void StudyConfig::validate() const {
  if (!(domain.width() > 0 && domain.height() > 0)) throw InputError("study: empty domain");
  if (!(extension >= 0)) throw InputError("study: extension must be non-negative");
  if (!(mesh_h > 0)) throw InputError("study: mesh_h must be positive");
  if (generators.empty()) throw InputError("study: no generators");
  if (candidates.empty()) throw InputError("study: no candidates");
  if (replicates < 1) throw InputError("study: replicates must be at least 1");
  if (n_obs.empty()) throw InputError("study: n_obs is empty");
  for (int n : n_obs)
    if (n < 1) throw InputError("study: observation counts must be positive");
  if (!(noise_var >= 0)) throw InputError("study: noise_var must be non-negative");
  if (grid < 1) throw InputError("study: grid must be positive");
  if (threads < 1) throw InputError("study: threads must be at least 1");
  if (!(init_spread >= 0 && init_spread < 1)) throw InputError("study: init_spread must lie in [0, 1)");
  std::set<std::string> names;
  for (const auto& g : generators) {
    if (!names.insert(g.name).second) throw InputError("study: duplicate generator name " + g.name);
    if (!(g.nu > 0 && g.rho0 > 0 && g.sigma0 > 0)) throw InputError("study: generator parameters must be positive");
    if (g.nu >= 3.0)
      throw InputError("study: generator nu must be below 3");
  }
  for (const auto& c : candidates)
    if (is_nonstationary(c.cls) && !(c.c_ns > 1 && c.basis_count >= 3))
      throw InputError("study: non-stationary candidates need basis_count >= 3 and c_ns > 1");
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words = {static_cast<std::uint32_t>(seed),
                                      static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Study::Study(StudyConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  mesh_ = std::make_shared<const TriMesh>(build_rect_mesh(cfg_.domain, cfg_.extension, cfg_.mesh_h));
  for (std::size_t gi = 0; gi < cfg_.generators.size(); ++gi) {
    GeneratorSpec& g = cfg_.generators[gi];
    if (!g.nonstationary) continue;
    const BasisSpec basis = basis_for_count(g.basis_count, cfg_.domain);
    if (g.alpha_vx.size() == 0 || g.alpha_vy.size() == 0) {
      const double tau = penalty(g.basis_count, g.c_ns)[2];
      const Vector sd = (spectral_precision(basis) * tau).cwiseSqrt().cwiseInverse();
      auto rng = derived_rng(cfg_.seed, {2, gi});
      std::normal_distribution<double> normal;
      g.alpha_vx.resize(basis.size());
      g.alpha_vy.resize(basis.size());
      for (Index i = 0; i < basis.size(); ++i) g.alpha_vx(i) = normal(rng) * sd(i);
      for (Index i = 0; i < basis.size(); ++i) g.alpha_vy(i) = normal(rng) * sd(i);
    }
    if (g.alpha_vx.size() != basis.size() || g.alpha_vy.size() != basis.size())
      throw InputError("study: generator coefficients do not match basis_count");
  }
}

std::array<double, 4> Study::penalty(int basis_count, double c_ns) const {
  for (const auto& [b, c, tau] : penalties_)
    if (b == basis_count && c == c_ns) return tau;
  const BasisSpec basis = basis_for_count(basis_count, cfg_.domain);
  auto rng = derived_rng(cfg_.seed, {3, static_cast<std::uint64_t>(basis_count),
                                     static_cast<std::uint64_t>(std::llround(c_ns * 1000.0))});
  std::array<double, 4> tau;
  tau[0] = calibrate_penalty(PenaltyTarget::Range, c_ns, basis, rng, cfg_.calibration);
  tau[1] = calibrate_penalty(PenaltyTarget::Sigma, c_ns, basis, rng, cfg_.calibration);
  tau[2] = calibrate_penalty(PenaltyTarget::Anisotropy, c_ns, basis, rng, cfg_.calibration);
  tau[3] = tau[2];
  penalties_.emplace_back(basis_count, c_ns, tau);
  return tau;
}

Dataset Study::dataset(int generator, int replicate) const {
  const GeneratorSpec& g = cfg_.generators.at(generator);
  const FieldParams params = generator_params(g);
  const BasisSpec basis =
      g.nonstationary ? basis_for_count(g.basis_count, cfg_.domain) : BasisSpec();
  const Matrix& centroids = mesh_->centroids();
  const PointFields f = field_values(params, basis, centroids);
  const Vector tau = tau_field(params, basis, centroids);
  const FemMatrices fem = assemble_fem(*mesh_, f.kappa, tau, tensor_from_v(f.vx, f.vy));
  const FracOperator frac = assemble_frac(fem, f.kappa.minCoeff(), params.beta(), cfg_.order);

  auto rng = derived_rng(cfg_.seed, {1, static_cast<std::uint64_t>(generator),
                                     static_cast<std::uint64_t>(replicate)});
  const Vector w = sample_weights(frac, rng);

  const int n_max = *std::max_element(cfg_.n_obs.begin(), cfg_.n_obs.end());
  Dataset d;
  std::uniform_real_distribution<double> ux(cfg_.domain.x0, cfg_.domain.x1);
  std::uniform_real_distribution<double> uy(cfg_.domain.y0, cfg_.domain.y1);
  d.obs_locations.resize(n_max, 2);
  for (int i = 0; i < n_max; ++i) {
    d.obs_locations(i, 0) = ux(rng);
    d.obs_locations(i, 1) = uy(rng);
  }
  d.obs_latent = projector(*mesh_, d.obs_locations) * w;
  std::normal_distribution<double> normal;
  const double sd = std::sqrt(cfg_.noise_var);
  d.obs_values = d.obs_latent;
  for (int i = 0; i < n_max; ++i) d.obs_values(i) += sd * normal(rng);
  d.grid_locations = grid_points(cfg_.domain, cfg_.grid);
  d.grid_truth = projector(*mesh_, d.grid_locations) * w;
  return d;
}

Dataset generate_dataset(const Study& study, int generator, int replicate) {
  return study.dataset(generator, replicate);
}

StudyRow run_cell(const Study& study, const Dataset& data, int generator, int candidate,
                  int n_obs, int replicate) {
  const StudyConfig& cfg = study.config();
  const GeneratorSpec& g = cfg.generators.at(generator);
  const CandidateSpec& c = cfg.candidates.at(candidate);
  StudyRow row;
  row.generator = g.name;
  row.candidate = c.label();
  row.n_obs = n_obs;
  row.replicate = replicate;
  const auto start = std::chrono::steady_clock::now();
  try {
    if (n_obs > data.obs_values.size()) throw InputError("n_obs exceeds the sampled locations");
    ObservationSet obs;
    obs.locations = data.obs_locations.topRows(n_obs);
    obs.values = data.obs_values.head(n_obs);
    obs.design.resize(n_obs, 0);

    ModelSpec spec;
    spec.cls = c.cls;
    spec.order = cfg.order;
    spec.prior = derive_hyper(cfg.priors);
    if (is_nonstationary(c.cls)) {
      spec.basis = basis_for_count(c.basis_count, cfg.domain);
      spec.penalty.q_ns = spectral_precision(spec.basis);
      spec.penalty.tau = study.penalty(c.basis_count, c.c_ns);
    }
    const Model model(study.mesh_ptr(), spec, obs);

    auto rng = derived_rng(cfg.seed, {4, static_cast<std::uint64_t>(generator),
                                      static_cast<std::uint64_t>(replicate),
                                      static_cast<std::uint64_t>(candidate),
                                      static_cast<std::uint64_t>(n_obs)});
    std::uniform_real_distribution<double> spread(1.0 - cfg.init_spread, 1.0 + cfg.init_spread);
    NaturalParams init;
    const double nu = is_fractional(c.cls)
                          ? std::min(g.nu * spread(rng), 0.95 * cfg.priors.nu_max)
                          : spec.nu_fixed;
    const double rho = g.rho0 * spread(rng);
    init.field.nu = nu;
    init.field.log_kappa0 = std::log(std::sqrt(8.0 * nu) / rho);
    init.field.log_sigma0 = std::log(g.sigma0 * spread(rng));
    init.field.vx0 = g.vx0 * spread(rng);
    init.field.vy0 = g.vy0 * spread(rng);
    init.sigma_n2 = std::max(cfg.noise_var, 1e-6) * spread(rng);

    const FitResult fit = fit_map(model, model.pack(init), cfg.adam);
    const Posterior post = model.posterior(fit.theta);
    const Prediction pred = predict(post, study.mesh(), data.grid_locations,
                                    Matrix(data.grid_locations.rows(), 0), Scale::Latent);
    const Scores s = score_set(pred, data.grid_truth);

    const FieldParams& fp = post.params.field;
    const Interpretable ip = interpretable(std::exp(fp.log_kappa0), fp.vx0, fp.vy0, fp.nu);
    row.rmse = s.rmse;
    row.crps = s.crps;
    row.nu = fp.nu;
    row.rho0 = ip.rho;
    row.a0 = ip.a;
    row.psi0_deg = ip.psi * 180.0 / std::numbers::pi;
    row.sigma0 = std::exp(fp.log_sigma0);
    row.sigma_n = std::sqrt(post.params.sigma_n2);
    row.logpost = fit.logpost;
    row.iterations = fit.iterations;
    row.converged = fit.converged;
  } catch (const std::exception& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.status = "failed: " + sanitize(e.what());
    row.rmse = row.crps = row.nu = row.rho0 = row.a0 = row.psi0_deg = row.sigma0 = row.sigma_n =
        row.logpost = nan;
  }
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

std::string study_csv_header() {
  return "generator,candidate,n_obs,replicate,status,rmse,crps,nu,rho0,a0,psi0_deg,sigma0,"
         "sigma_n,logpost,iterations,converged";
}

std::string to_csv(const StudyRow& r) {
  std::ostringstream os;
  os << r.generator << ',' << r.candidate << ',' << r.n_obs << ',' << r.replicate << ','
     << r.status << ',' << fmt(r.rmse) << ',' << fmt(r.crps) << ',' << fmt(r.nu) << ','
     << fmt(r.rho0) << ',' << fmt(r.a0) << ',' << fmt(r.psi0_deg) << ',' << fmt(r.sigma0) << ','
     << fmt(r.sigma_n) << ',' << fmt(r.logpost) << ',' << r.iterations << ','
     << (r.converged ? 1 : 0);
  return os.str();
}

StudyRow parse_study_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 16) throw InputError("study csv: expected 16 fields, got " + std::to_string(f.size()));
  StudyRow r;
  try {
    r.generator = f[0];
    r.candidate = f[1];
    r.n_obs = std::stoi(f[2]);
    r.replicate = std::stoi(f[3]);
    r.status = f[4];
    r.rmse = parse_double(f[5]);
    r.crps = parse_double(f[6]);
    r.nu = parse_double(f[7]);
    r.rho0 = parse_double(f[8]);
    r.a0 = parse_double(f[9]);
    r.psi0_deg = parse_double(f[10]);
    r.sigma0 = parse_double(f[11]);
    r.sigma_n = parse_double(f[12]);
    r.logpost = parse_double(f[13]);
    r.iterations = std::stoi(f[14]);
    r.converged = f[15] == "1";
  } catch (const std::logic_error&) {
    throw InputError("study csv: malformed row '" + line + "'");
  }
  return r;
}

std::vector<StudyRow> read_study_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != study_csv_header()) throw InputError(path + ": unexpected header");
  std::vector<StudyRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_study_row(line));
  return rows;
}

std::vector<StudyRow> run_study(const Study& study, const std::string& results_csv,
                                const std::string& timing_csv, std::ostream* log) {
  const StudyConfig& cfg = study.config();
  std::vector<StudyRow> rows;
  std::set<std::string> done;
  const bool resume = std::filesystem::exists(results_csv);
  if (resume) {
    rows = read_study_csv(results_csv);
    for (const auto& r : rows) done.insert(key(r.generator, r.candidate, r.n_obs, r.replicate));
  }
  std::ofstream out(results_csv, std::ios::app);
  if (!out) throw InputError("cannot write " + results_csv);
  if (!resume) out << study_csv_header() << '\n' << std::flush;
  std::ofstream timing;
  if (!timing_csv.empty()) {
    const bool had = std::filesystem::exists(timing_csv);
    timing.open(timing_csv, std::ios::app);
    if (!had) timing << "generator,candidate,n_obs,replicate,runtime_s\n";
  }

  // Sorted so that every observation count of one replicate runs together.
  std::vector<int> counts = cfg.n_obs;
  std::sort(counts.begin(), counts.end());
  std::vector<Task> pending;
  for (int g = 0; g < static_cast<int>(cfg.generators.size()); ++g)
    for (int r = 0; r < cfg.replicates; ++r)
      for (int c = 0; c < static_cast<int>(cfg.candidates.size()); ++c)
        for (int n : counts)
          if (!done.count(key(cfg.generators[g].name, cfg.candidates[c].label(), n, r)))
            pending.push_back({g, r, c, n});

  std::map<std::pair<int, int>, std::shared_ptr<const Dataset>> cache;
  auto data_for = [&](int g, int r) {
    auto& slot = cache[{g, r}];
    if (!slot) slot = std::make_shared<const Dataset>(study.dataset(g, r));
    return slot;
  };

  for (std::size_t start = 0; start < pending.size(); start += cfg.threads) {
    const std::size_t end = std::min(pending.size(), start + static_cast<std::size_t>(cfg.threads));
    std::vector<std::shared_ptr<const Dataset>> data;
    for (std::size_t i = start; i < end; ++i) data.push_back(data_for(pending[i].generator, pending[i].replicate));
    std::vector<StudyRow> batch(end - start);
    auto work = [&](std::size_t i) {
      const Task& t = pending[start + i];
      batch[i] = run_cell(study, *data[i], t.generator, t.candidate, t.n_obs, t.replicate);
    };
    if (end - start == 1) {
      work(0);
    } else {
      // Penalties are calibrated up front so workers only read the cache.
      for (std::size_t i = start; i < end; ++i) {
        const CandidateSpec& c = cfg.candidates[pending[i].candidate];
        if (is_nonstationary(c.cls)) study.penalty(c.basis_count, c.c_ns);
      }
      std::vector<std::thread> pool;
      for (std::size_t i = 0; i < batch.size(); ++i) pool.emplace_back(work, i);
      for (auto& th : pool) th.join();
    }
    for (const StudyRow& r : batch) {
      out << to_csv(r) << '\n' << std::flush;
      if (timing.is_open())
        timing << r.generator << ',' << r.candidate << ',' << r.n_obs << ',' << r.replicate << ','
               << fmt(r.runtime_s) << '\n' << std::flush;
      if (log)
        *log << r.generator << ' ' << r.candidate << " n=" << r.n_obs << " rep=" << r.replicate
             << ' ' << r.status << " rmse=" << r.rmse << " crps=" << r.crps << " nu=" << r.nu
             << " iters=" << r.iterations << " (" << r.runtime_s << " s)\n" << std::flush;
      rows.push_back(r);
    }
    // Datasets no longer needed by pending tasks are released.
    if (end < pending.size()) {
      const Task& next = pending[end];
      for (auto it = cache.begin(); it != cache.end();)
        it = (it->first < std::make_pair(next.generator, next.replicate)) ? cache.erase(it) : std::next(it);
    }
  }
  return rows;
}

std::vector<CellSummary> summarize(const std::vector<StudyRow>& rows) {
  std::vector<CellSummary> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    const std::string k = key(r.generator, r.candidate, r.n_obs, 0);
    auto it = index.find(k);
    if (it == index.end()) {
      it = index.emplace(k, out.size()).first;
      CellSummary s;
      s.generator = r.generator;
      s.candidate = r.candidate;
      s.n_obs = r.n_obs;
      out.push_back(s);
    }
    CellSummary& s = out[it->second];
    ++s.count;
    s.mean_rmse += r.rmse;
    s.mean_crps += r.crps;
  }
  for (auto& s : out) {
    s.mean_rmse /= s.count;
    s.mean_crps /= s.count;
  }
  return out;
}

namespace {

ParamSummary summary_of(const std::vector<double>& v) {
  ParamSummary s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

std::vector<BiasRow> estimate_bias(const std::vector<StudyRow>& rows) {
  struct Acc {
    BiasRow head;
    std::vector<double> nu, rho0, a0, psi, sigma0, sigma_n;
  };
  std::vector<Acc> acc;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    const std::string k = key(r.generator, r.candidate, r.n_obs, 0);
    auto it = index.find(k);
    if (it == index.end()) {
      it = index.emplace(k, acc.size()).first;
      Acc a;
      a.head.generator = r.generator;
      a.head.candidate = r.candidate;
      a.head.n_obs = r.n_obs;
      acc.push_back(std::move(a));
    }
    Acc& a = acc[it->second];
    a.nu.push_back(r.nu);
    a.rho0.push_back(r.rho0);
    a.a0.push_back(r.a0);
    a.psi.push_back(r.psi0_deg);
    a.sigma0.push_back(r.sigma0);
    a.sigma_n.push_back(r.sigma_n);
  }
  std::vector<BiasRow> out;
  for (auto& a : acc) {
    BiasRow b = a.head;
    b.count = static_cast<int>(a.nu.size());
    b.nu = summary_of(a.nu);
    b.rho0 = summary_of(a.rho0);
    b.a0 = summary_of(a.a0);
    b.psi0_deg = summary_of(a.psi);
    b.sigma0 = summary_of(a.sigma0);
    b.sigma_n = summary_of(a.sigma_n);
    out.push_back(b);
  }
  return out;
}

void write_bias(std::ostream& os, const std::vector<BiasRow>& rows) {
  os << "generator,candidate,n_obs,count";
  for (const char* p : {"nu", "rho0", "a0", "psi0_deg", "sigma0", "sigma_n"})
    os << ',' << p << "_mean," << p << "_sd";
  os << '\n';
  for (const auto& b : rows) {
    os << b.generator << ',' << b.candidate << ',' << b.n_obs << ',' << b.count;
    for (const ParamSummary* s : {&b.nu, &b.rho0, &b.a0, &b.psi0_deg, &b.sigma0, &b.sigma_n})
      os << ',' << fmt(s->mean) << ',' << (s->sd ? fmt(*s->sd) : "");
    os << '\n';
  }
}

void write_bias_table(std::ostream& os, const std::vector<BiasRow>& rows) {
  auto cell = [](const ParamSummary& s, double scale, int digits) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(digits) << s.mean * scale;
    if (s.sd) c << " (" << *s.sd * scale << ")";
    return c.str();
  };
  os << std::left << std::setw(16) << "generator" << std::setw(16) << "model" << std::setw(7)
     << "n" << std::setw(12) << "nu" << std::setw(12) << "rho0" << std::setw(12) << "a0"
     << std::setw(12) << "psi0[deg]" << std::setw(12) << "sigma0" << "sigma_N[1e-1]\n";
  for (const auto& b : rows)
    os << std::setw(16) << b.generator << std::setw(16) << b.candidate << std::setw(7) << b.n_obs
       << std::setw(12) << cell(b.nu, 1.0, 1) << std::setw(12) << cell(b.rho0, 1.0, 1)
       << std::setw(12) << cell(b.a0, 1.0, 1) << std::setw(12) << cell(b.psi0_deg, 1.0, 0)
       << std::setw(12) << cell(b.sigma0, 1.0, 1) << cell(b.sigma_n, 10.0, 1) << '\n';
}

void write_summary(std::ostream& os, const std::vector<CellSummary>& rows) {
  os << "generator,candidate,n_obs,count,mean_rmse,mean_crps\n";
  for (const auto& s : rows)
    os << s.generator << ',' << s.candidate << ',' << s.n_obs << ',' << s.count << ','
       << fmt(s.mean_rmse) << ',' << fmt(s.mean_crps) << '\n';
}

}  // namespace fracspde
