#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fracspde/config.hpp"
#include "fracspde/errors.hpp"
#include "fracspde/io.hpp"
#include "fracspde/study.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fracspde;

namespace {

constexpr const char* kVersion = "0.1.0";

int log_level() {
  const char* v = std::getenv("FRACSPDE_LOG");
  return v ? std::atoi(v) : 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << '\n';
}

struct Overrides {
  std::string config;
  std::optional<std::string> out, data, locations, truth, prediction, fit, mesh, cls, scale;
  std::optional<int> basis, threads, max_iter, replicate;
  std::optional<double> cns;
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : parse_config(o.config);
  if (o.out) c.io.output_dir = *o.out;
  if (o.data) c.io.data = *o.data;
  if (o.locations) c.io.locations = *o.locations;
  if (o.truth) c.io.truth = *o.truth;
  if (o.prediction) c.io.prediction = *o.prediction;
  if (o.fit) c.io.fit = *o.fit;
  if (o.mesh) c.mesh.file = *o.mesh;
  if (o.cls) {
    parse_model_class(*o.cls);
    c.model.cls = *o.cls;
  }
  if (o.basis) c.model.basis = *o.basis;
  if (o.cns) c.model.cns = *o.cns;
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.seed = *o.seed;
  if (o.max_iter) c.optimizer.max_iterations = c.study.optimizer.max_iterations = *o.max_iter;
  if (o.paper_scale) c.study.paper_scale = true;
  if (c.threads < 1) throw InputError("--threads must be at least 1");
  if (c.model.basis != 8 && c.model.basis != 16) throw InputError("--basis must be 8 or 16");
  return c;
}

std::string path_in(const RunConfig& c, const std::string& name) {
  return (fs::path(c.io.output_dir) / name).string();
}

std::ofstream create(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  return os;
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector json_vec(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

// Builds the model described by the config around `obs`, calibrating the
// spectral penalties for non-stationary classes.
Model make_model(const RunConfig& c, std::shared_ptr<const TriMesh> mesh, const ObservationSet& obs,
                 json& extra) {
  ModelSpec spec;
  spec.cls = parse_model_class(c.model.cls);
  spec.order = c.model.order;
  spec.eps = c.model.eps;
  spec.nu_fixed = c.model.nu_fixed;
  spec.prior = derive_hyper(c.priors);
  extra["prior"] = {{"lambda_rho", spec.prior.lambda_rho}, {"lambda_sigma", spec.prior.lambda_sigma},
                    {"lambda_sigma_n", spec.prior.lambda_sigma_n}, {"sigma_v", spec.prior.sigma_v},
                    {"beta_p", spec.prior.p}, {"beta_q", spec.prior.q}};
  if (is_nonstationary(spec.cls)) {
    spec.basis = basis_for_count(c.model.basis, mesh->interest());
    spec.penalty.q_ns = spectral_precision(spec.basis);
    auto rng = derived_rng(c.seed, {3, static_cast<std::uint64_t>(c.model.basis),
                                    static_cast<std::uint64_t>(std::llround(c.model.cns * 1000.0))});
    const PenaltyTarget targets[3] = {PenaltyTarget::Range, PenaltyTarget::Sigma, PenaltyTarget::Anisotropy};
    for (int k = 0; k < 3; ++k)
      spec.penalty.tau[k] = calibrate_penalty(targets[k], c.model.cns, spec.basis, rng, c.calibration);
    spec.penalty.tau[3] = spec.penalty.tau[2];
    extra["tau"] = {spec.penalty.tau[0], spec.penalty.tau[1], spec.penalty.tau[2], spec.penalty.tau[3]};
  }
  return Model(std::move(mesh), spec, obs);
}

ObservationSet load_data(const RunConfig& c) {
  if (c.io.data.empty()) throw InputError("no data file (set io.data or --data)");
  return read_observations(c.io.data);
}

std::shared_ptr<const TriMesh> load_mesh_for(const RunConfig& c) {
  return std::make_shared<const TriMesh>(make_mesh(c.mesh));
}

void cmd_simulate(const RunConfig& c, json& extra) {
  StudyConfig sc;
  sc.domain = c.mesh.interest;
  sc.extension = c.mesh.extension;
  sc.mesh_h = c.mesh.h;
  sc.generators = {c.simulate.generator};
  sc.replicates = c.simulate.replicates;
  sc.n_obs = {c.simulate.n_obs};
  sc.candidates = {CandidateSpec{}};
  sc.noise_var = c.simulate.noise_var;
  sc.grid = c.simulate.grid;
  sc.seed = c.seed;
  sc.order = c.model.order;
  sc.priors = c.priors;
  sc.calibration = c.calibration;
  const Study study(sc);
  if (c.mesh.file.empty()) save_mesh(path_in(c, "mesh.txt"), study.mesh());

  ObservationSet all, truth;
  for (int r = 0; r < sc.replicates; ++r) {
    const Dataset d = study.dataset(0, r);
    const Index n0 = all.size(), n = d.obs_values.size();
    const Index g0 = truth.size(), g = d.grid_truth.size();
    all.locations.conservativeResize(n0 + n, 2);
    all.values.conservativeResize(n0 + n);
    all.locations.bottomRows(n) = d.obs_locations;
    all.values.tail(n) = d.obs_values;
    all.replicate.insert(all.replicate.end(), n, r);
    truth.locations.conservativeResize(g0 + g, 2);
    truth.values.conservativeResize(g0 + g);
    truth.locations.bottomRows(g) = d.grid_locations;
    truth.values.tail(g) = d.grid_truth;
    truth.replicate.insert(truth.replicate.end(), g, r);
    if (r == 0) {
      auto os = create(path_in(c, "grid.csv"));
      write_locations(os, d.grid_locations);
    }
  }
  {
    auto os = create(path_in(c, "data.csv"));
    write_observations(os, all);
  }
  {
    auto os = create(path_in(c, "truth.csv"));
    write_observations(os, truth);
  }
  const GeneratorSpec& g = study.config().generators[0];
  extra["generator"] = {{"name", g.name}, {"nonstationary", g.nonstationary}, {"nu", g.nu},
                        {"rho0", g.rho0}, {"sigma0", g.sigma0}, {"alpha_vx", vec_json(g.alpha_vx)},
                        {"alpha_vy", vec_json(g.alpha_vy)}};
  extra["artifacts"] = {"data.csv", "truth.csv", "grid.csv"};
  info("simulate: wrote " + std::to_string(all.size()) + " observations over " +
       std::to_string(sc.replicates) + " replicate(s)");
}

void cmd_calibrate(const RunConfig& c, json& extra) {
  const BasisSpec basis = basis_for_count(c.model.basis, c.mesh.interest);
  auto rng = derived_rng(c.seed, {3, static_cast<std::uint64_t>(c.model.basis),
                                  static_cast<std::uint64_t>(std::llround(c.model.cns * 1000.0))});
  auto os = create(path_in(c, "calibration.csv"));
  os << "target,basis,cns,tau\n";
  const std::pair<const char*, PenaltyTarget> targets[3] = {
      {"range", PenaltyTarget::Range}, {"sigma", PenaltyTarget::Sigma}, {"anisotropy", PenaltyTarget::Anisotropy}};
  json taus;
  for (const auto& [name, target] : targets) {
    const double tau = calibrate_penalty(target, c.model.cns, basis, rng, c.calibration);
    os << name << ',' << c.model.basis << ',' << c.model.cns << ',' << tau << '\n';
    taus[name] = tau;
  }
  extra["tau"] = taus;
  extra["artifacts"] = {"calibration.csv"};
}

NaturalParams initial_params(const RunConfig& c, const Model& model) {
  NaturalParams init;
  const bool frac = is_fractional(model.spec().cls);
  const double nu = frac ? c.init.nu : c.model.nu_fixed;
  init.field.nu = nu;
  init.field.log_kappa0 = std::log(std::sqrt(8.0 * nu) / c.init.rho0);
  init.field.log_sigma0 = std::log(c.init.sigma0);
  init.field.vx0 = c.init.vx0;
  init.field.vy0 = c.init.vy0;
  init.sigma_n2 = c.init.sigma_n2;
  return init;
}

json natural_json(const NaturalParams& p) {
  const FieldParams& f = p.field;
  const Interpretable ip = interpretable(std::exp(f.log_kappa0), f.vx0, f.vy0, f.nu);
  return {{"nu", f.nu},
          {"kappa0", std::exp(f.log_kappa0)},
          {"rho0", ip.rho},
          {"a0", ip.a},
          {"psi0_deg", ip.psi * 180.0 / std::numbers::pi},
          {"sigma0", std::exp(f.log_sigma0)},
          {"vx0", f.vx0},
          {"vy0", f.vy0},
          {"sigma_n2", p.sigma_n2},
          {"alpha_kappa", vec_json(f.alpha_kappa)},
          {"alpha_sigma", vec_json(f.alpha_sigma)},
          {"alpha_vx", vec_json(f.alpha_vx)},
          {"alpha_vy", vec_json(f.alpha_vy)}};
}

void cmd_fit(const RunConfig& c, json& extra) {
  const ObservationSet obs = load_data(c);
  const Model model = make_model(c, load_mesh_for(c), obs, extra);
  const Vector theta0 = model.pack(initial_params(c, model));
  const FitResult fit = fit_map(model, theta0, c.optimizer, [](const TraceRow& r) {
    if (log_level() >= 2)
      std::cerr << "iter " << r.iteration << " logpost " << r.logpost << " |g| " << r.grad_norm << '\n';
  });
  json out;
  out["class"] = to_string(model.spec().cls);
  out["names"] = model.layout().names();
  out["theta"] = vec_json(fit.theta);
  out["natural"] = natural_json(model.unpack(fit.theta));
  out["logpost"] = fit.logpost;
  out["converged"] = fit.converged;
  out["iterations"] = fit.iterations;
  out["failed_steps"] = fit.failed_steps;
  out["wall_seconds"] = fit.wall_seconds;
  {
    auto os = create(path_in(c, "fit.json"));
    os << out.dump(2) << '\n';
  }
  {
    auto os = create(path_in(c, "trace.csv"));
    write_trace(os, fit.trace);
  }
  extra["artifacts"] = {"fit.json", "trace.csv"};
  info("fit: logpost " + std::to_string(fit.logpost) + " after " + std::to_string(fit.iterations) +
       " iterations" + (fit.converged ? "" : " (not converged)"));
}

void cmd_predict(const RunConfig& c, const Overrides& o, json& extra) {
  const ObservationSet obs = load_data(c);
  if (c.io.locations.empty()) throw InputError("no prediction locations (set io.locations or --locations)");
  const std::string fit_path = c.io.fit.empty() ? path_in(c, "fit.json") : c.io.fit;
  std::ifstream in(fit_path);
  if (!in) throw InputError("cannot open " + fit_path);
  json fit;
  try {
    fit = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(fit_path + ": " + e.what());
  }
  const Model model = make_model(c, load_mesh_for(c), obs, extra);
  if (!fit.contains("theta") || !fit["theta"].is_array())
    throw InputError(fit_path + ": missing theta");
  const Vector theta = json_vec(fit["theta"]);
  if (theta.size() != model.layout().size)
    throw InputError(fit_path + ": parameter count does not match the configured model class");
  const Posterior post = model.posterior(theta);
  const Matrix locs = read_locations(c.io.locations);
  const std::string which = o.scale.value_or("both");
  if (which != "both" && which != "latent" && which != "observation")
    throw InputError("--scale must be latent, observation or both");
  const int replicate = o.replicate.value_or(post.replicates.front().replicate);
  auto os = create(path_in(c, "prediction.csv"));
  os << "x,y,mean,sd,scale\n";
  for (Scale s : {Scale::Latent, Scale::Observation}) {
    if (which != "both" && which != to_string(s)) continue;
    const Prediction p = predict(post, model.mesh(), locs, Matrix(locs.rows(), 0), s, replicate);
    std::ostringstream body;
    write_prediction(body, p);
    const std::string text = body.str();
    os << text.substr(text.find('\n') + 1);
  }
  extra["artifacts"] = {"prediction.csv"};
}

void cmd_score(const RunConfig& c, const Overrides& o, json& extra) {
  const std::string pred_path = c.io.prediction.empty() ? path_in(c, "prediction.csv") : c.io.prediction;
  if (c.io.truth.empty()) throw InputError("no truth file (set io.truth or --truth)");
  const std::vector<Prediction> preds = read_prediction(pred_path);
  const ObservationSet truth_all = read_observations(c.io.truth);
  // Truth rows of one replicate, in file order.
  std::vector<Index> rows;
  const int replicate = o.replicate.value_or(truth_all.replicate.empty() ? 0 : truth_all.replicate.front());
  for (Index i = 0; i < truth_all.size(); ++i)
    if (truth_all.replicate.empty() || truth_all.replicate[i] == replicate) rows.push_back(i);
  const ObservationSet truth = truth_all.subset(rows);
  auto os = create(path_in(c, "scores.csv"));
  os << "scale,n,rmse,crps\n";
  for (const Prediction& p : preds) {
    if (p.mean.size() != truth.size())
      throw DimensionError("score: prediction has " + std::to_string(p.mean.size()) + " rows but truth has " +
                           std::to_string(truth.size()));
    if ((p.locations - truth.locations).cwiseAbs().maxCoeff() > 1e-9)
      throw InputError("score: prediction and truth locations differ");
    const Scores s = score_set(p, truth.values);
    os << to_string(p.scale) << ',' << truth.size() << ',' << s.rmse << ',' << s.crps << '\n';
    extra["scores"][to_string(p.scale)] = {{"rmse", s.rmse}, {"crps", s.crps}};
  }
  extra["artifacts"] = {"scores.csv"};
}

void cmd_study(const RunConfig& c, json& extra) {
  const Study study(study_config(c));
  json gens = json::array();
  for (const auto& g : study.config().generators)
    gens.push_back({{"name", g.name}, {"nonstationary", g.nonstationary}, {"nu", g.nu}, {"rho0", g.rho0},
                    {"sigma0", g.sigma0}, {"vx0", g.vx0}, {"vy0", g.vy0}, {"basis_count", g.basis_count},
                    {"c_ns", g.c_ns}, {"alpha_vx", vec_json(g.alpha_vx)}, {"alpha_vy", vec_json(g.alpha_vy)}});
  extra["generators"] = gens;
  extra["mesh"] = {{"vertices", study.mesh().num_vertices()}, {"triangles", study.mesh().num_triangles()}};
  json taus = json::array();
  for (const auto& cand : study.config().candidates)
    if (is_nonstationary(cand.cls)) {
      const auto t = study.penalty(cand.basis_count, cand.c_ns);
      taus.push_back({{"candidate", cand.label()}, {"tau", {t[0], t[1], t[2], t[3]}}});
    }
  extra["tau"] = taus;
  std::ostream* log = log_level() >= 1 ? &std::cerr : nullptr;
  const auto rows = run_study(study, path_in(c, "results.csv"), path_in(c, "timing.csv"), log);
  {
    auto os = create(path_in(c, "summary.csv"));
    write_summary(os, summarize(rows));
  }
  const auto bias = estimate_bias(rows);
  {
    auto os = create(path_in(c, "bias.csv"));
    write_bias(os, bias);
  }
  {
    auto os = create(path_in(c, "bias.txt"));
    write_bias_table(os, bias);
  }
  int failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  extra["cells"] = rows.size();
  extra["failed_cells"] = failed;
  extra["artifacts"] = {"results.csv", "timing.csv", "summary.csv", "bias.csv", "bias.txt"};
}

void write_manifest(const std::string& dir, const std::string& command, const std::string& config_text,
                    const json& extra, const std::string& error) {
  json m;
  m["command"] = command;
  m["status"] = error.empty() ? "ok" : "error";
  if (!error.empty()) m["error"] = error;
  m["version"] = kVersion;
  if (!config_text.empty()) m["config"] = json::parse(config_text);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (os) os << m.dump(2) << '\n';
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractional non-stationary SPDE models: simulate, calibrate, fit, predict, score, study"};
  app.set_version_flag("--version", kVersion);
  Overrides o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Draw synthetic datasets from a generator"},
      {"calibrate", "Calibrate the spectral penalties for a basis size and threshold"},
      {"fit", "MAP estimation with Adam"},
      {"predict", "Posterior prediction at new locations"},
      {"score", "RMSE and CRPS of a prediction against truth"},
      {"study", "Run the candidate-model simulation study"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", o.config, "JSON configuration file");
    sub->add_option("-o,--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--threads", o.threads, "Worker threads (default 1)");
    sub->add_option("--class", o.cls, "Model class: nf-s, nf-ns, f-s or f-ns");
    sub->add_option("--basis", o.basis, "Number of basis functions: 8 or 16");
    sub->add_option("--cns", o.cns, "Non-stationarity threshold C_NS, e.g. 2, 5 or 10");
    sub->add_option("--mesh", o.mesh, "Mesh file");
    sub->add_option("--data", o.data, "Observation CSV (x,y,value[,replicate])");
    sub->add_option("--locations", o.locations, "Prediction locations CSV (x,y)");
    sub->add_option("--truth", o.truth, "Truth CSV (x,y,value[,replicate])");
    sub->add_option("--prediction", o.prediction, "Prediction CSV");
    sub->add_option("--fit", o.fit, "Fit result JSON");
    sub->add_option("--max-iter", o.max_iter, "Maximum optimizer iterations");
    sub->add_option("--replicate", o.replicate, "Replicate to predict or score");
    sub->add_option("--scale", o.scale, "Prediction scale: latent, observation or both");
    sub->add_flag("--paper-scale", o.paper_scale, "Use the full paper-scale study");
  }
  app.require_subcommand(1, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  std::string out_dir = o.out.value_or("out");
  std::string config_text;
  json extra = json::object();
  try {
    const RunConfig cfg = resolve(o);
    out_dir = cfg.io.output_dir;
    config_text = to_json_text(cfg);
    fs::create_directories(out_dir);
    if (command == "simulate") cmd_simulate(cfg, extra);
    else if (command == "calibrate") cmd_calibrate(cfg, extra);
    else if (command == "fit") cmd_fit(cfg, extra);
    else if (command == "predict") cmd_predict(cfg, o, extra);
    else if (command == "score") cmd_score(cfg, o, extra);
    else if (command == "study") cmd_study(cfg, extra);
  } catch (const std::exception& e) {
    const std::string msg = one_line(e.what());
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    write_manifest(out_dir, command, config_text, extra, msg);
    std::cerr << "error: " << command << ": " << msg << '\n';
    return 1;
  }
  write_manifest(out_dir, command, config_text, extra, "");
  return 0;
}
