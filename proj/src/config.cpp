#include "fracspde/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fracspde/errors.hpp"
#include "json.hpp"

namespace fracspde {

namespace {

using nlohmann::json;

// Object reader that records which keys were consumed so the rest can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InputError("config: '" + where() + "' expects an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    read(j_.at(key), name(key), out);
  }

  /// Sub-object, or nullptr when absent.
  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw InputError("config: unknown key '" + name(it.key()) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  static void read(const json& v, const std::string& key, double& out) {
    if (!v.is_number()) throw InputError("config: key '" + key + "' expects a number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& key, int& out) {
    if (!v.is_number_integer()) throw InputError("config: key '" + key + "' expects an integer");
    out = v.get<int>();
  }
  static void read(const json& v, const std::string& key, std::uint64_t& out) {
    if (!v.is_number_unsigned()) throw InputError("config: key '" + key + "' expects a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, const std::string& key, bool& out) {
    if (!v.is_boolean()) throw InputError("config: key '" + key + "' expects a boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& key, std::string& out) {
    if (!v.is_string()) throw InputError("config: key '" + key + "' expects a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, const std::string& key, std::vector<int>& out) {
    if (!v.is_array()) throw InputError("config: key '" + key + "' expects an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw InputError("config: key '" + key + "' expects an array of integers");
      out.push_back(e.get<int>());
    }
  }
  static void read(const json& v, const std::string& key, Vector& out) {
    if (!v.is_array()) throw InputError("config: key '" + key + "' expects an array of numbers");
    out.resize(static_cast<Index>(v.size()));
    Index i = 0;
    for (const auto& e : v) {
      if (!e.is_number()) throw InputError("config: key '" + key + "' expects an array of numbers");
      out(i++) = e.get<double>();
    }
  }
  static void read(const json& v, const std::string& key, Rect& out) {
    if (!v.is_array() || v.size() != 4)
      throw InputError("config: key '" + key + "' expects [x0, x1, y0, y1]");
    for (const auto& e : v)
      if (!e.is_number()) throw InputError("config: key '" + key + "' expects [x0, x1, y0, y1]");
    out = Rect{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_generator(const json& j, const std::string& path, GeneratorSpec& g) {
  Section s(j, path);
  s.get("name", g.name);
  s.get("nonstationary", g.nonstationary);
  s.get("nu", g.nu);
  s.get("rho0", g.rho0);
  s.get("sigma0", g.sigma0);
  s.get("vx0", g.vx0);
  s.get("vy0", g.vy0);
  s.get("basis_count", g.basis_count);
  s.get("c_ns", g.c_ns);
  s.get("alpha_vx", g.alpha_vx);
  s.get("alpha_vy", g.alpha_vy);
  s.finish();
}

void read_candidate(const json& j, const std::string& path, CandidateSpec& c) {
  Section s(j, path);
  std::string cls = "f-s";
  s.get("class", cls);
  c.cls = parse_model_class(cls);
  s.get("basis", c.basis_count);
  s.get("cns", c.c_ns);
  s.finish();
}

void read_optimizer(const json& j, const std::string& path, AdamOptions& o) {
  Section s(j, path);
  s.get("learning_rate", o.learning_rate);
  s.get("beta1", o.beta1);
  s.get("beta2", o.beta2);
  s.get("epsilon", o.epsilon);
  s.get("max_iterations", o.max_iterations);
  s.get("rel_tol", o.rel_tol);
  s.get("prior_scaled", o.prior_scaled);
  s.finish();
}

json optimizer_json(const AdamOptions& o) {
  return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1}, {"beta2", o.beta2},
          {"epsilon", o.epsilon}, {"max_iterations", o.max_iterations}, {"rel_tol", o.rel_tol},
          {"prior_scaled", o.prior_scaled}};
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json generator_json(const GeneratorSpec& g) {
  return {{"name", g.name},         {"nonstationary", g.nonstationary}, {"nu", g.nu},
          {"rho0", g.rho0},         {"sigma0", g.sigma0},               {"vx0", g.vx0},
          {"vy0", g.vy0},           {"basis_count", g.basis_count},     {"c_ns", g.c_ns},
          {"alpha_vx", vec_json(g.alpha_vx)}, {"alpha_vy", vec_json(g.alpha_vy)}};
}

std::string class_key(ModelClass c) {
  std::string s = to_string(c);
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

RunConfig from_json(const json& root) {
  RunConfig c;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  if (const json* j = top.child("mesh")) {
    Section s(*j, "mesh");
    s.get("file", c.mesh.file);
    s.get("interest", c.mesh.interest);
    s.get("extension", c.mesh.extension);
    s.get("h", c.mesh.h);
    s.finish();
  }
  if (const json* j = top.child("model")) {
    Section s(*j, "model");
    s.get("class", c.model.cls);
    s.get("basis", c.model.basis);
    s.get("cns", c.model.cns);
    s.get("order", c.model.order);
    s.get("eps", c.model.eps);
    s.get("nu_fixed", c.model.nu_fixed);
    s.finish();
  }
  if (const json* j = top.child("priors")) {
    Section s(*j, "priors");
    PriorInputs& p = c.priors;
    s.get("C_rho", p.C_rho);
    s.get("C_sigma", p.C_sigma);
    s.get("C_a", p.C_a);
    s.get("C_nu", p.C_nu);
    s.get("C_nu_hpd", p.C_nu_hpd);
    s.get("nu_max", p.nu_max);
    s.get("C_sigma_n", p.C_sigma_n);
    s.get("C_ns_rho", p.C_ns_rho);
    s.get("C_ns_sigma", p.C_ns_sigma);
    s.get("C_ns_v", p.C_ns_v);
    s.finish();
  }
  if (const json* j = top.child("optimizer")) {
    read_optimizer(*j, "optimizer", c.optimizer);
  }
  if (const json* j = top.child("init")) {
    Section s(*j, "init");
    s.get("rho0", c.init.rho0);
    s.get("sigma0", c.init.sigma0);
    s.get("nu", c.init.nu);
    s.get("sigma_n2", c.init.sigma_n2);
    s.get("vx0", c.init.vx0);
    s.get("vy0", c.init.vy0);
    s.finish();
  }
  if (const json* j = top.child("io")) {
    Section s(*j, "io");
    s.get("data", c.io.data);
    s.get("locations", c.io.locations);
    s.get("truth", c.io.truth);
    s.get("prediction", c.io.prediction);
    s.get("fit", c.io.fit);
    s.get("output_dir", c.io.output_dir);
    s.finish();
  }
  if (const json* j = top.child("calibration")) {
    Section s(*j, "calibration");
    s.get("grid", c.calibration.grid);
    s.get("n_mc", c.calibration.n_mc);
    s.get("log_tau_lo", c.calibration.log_tau_lo);
    s.get("log_tau_hi", c.calibration.log_tau_hi);
    s.finish();
  }
  if (const json* j = top.child("simulate")) {
    Section s(*j, "simulate");
    if (const json* g = s.child("generator")) read_generator(*g, "simulate.generator", c.simulate.generator);
    s.get("n_obs", c.simulate.n_obs);
    s.get("replicates", c.simulate.replicates);
    s.get("noise_var", c.simulate.noise_var);
    s.get("grid", c.simulate.grid);
    s.finish();
  }
  if (const json* j = top.child("study")) {
    Section s(*j, "study");
    StudySection& st = c.study;
    s.get("paper_scale", st.paper_scale);
    s.get("replicates", st.replicates);
    s.get("n_obs", st.n_obs);
    s.get("noise_var", st.noise_var);
    s.get("grid", st.grid);
    s.get("init_spread", st.init_spread);
    if (const json* o = s.child("optimizer")) read_optimizer(*o, "study.optimizer", st.optimizer);
    if (const json* g = s.child("generators")) {
      if (!g->is_array()) throw InputError("config: key 'study.generators' expects an array");
      st.generators.clear();
      for (std::size_t i = 0; i < g->size(); ++i) {
        GeneratorSpec spec;
        read_generator((*g)[i], "study.generators[" + std::to_string(i) + "]", spec);
        st.generators.push_back(spec);
      }
    }
    if (const json* g = s.child("candidates")) {
      if (!g->is_array()) throw InputError("config: key 'study.candidates' expects an array");
      st.candidates.clear();
      for (std::size_t i = 0; i < g->size(); ++i) {
        CandidateSpec spec;
        read_candidate((*g)[i], "study.candidates[" + std::to_string(i) + "]", spec);
        st.candidates.push_back(spec);
      }
    }
    s.finish();
  }
  top.finish();

  parse_model_class(c.model.cls);
  if (c.threads < 1) throw InputError("config: key 'threads' must be at least 1");
  if (!(c.mesh.h > 0)) throw InputError("config: key 'mesh.h' must be positive");
  if (c.optimizer.max_iterations < 1) throw InputError("config: key 'optimizer.max_iterations' must be positive");
  if (c.study.optimizer.max_iterations < 1)
    throw InputError("config: key 'study.optimizer.max_iterations' must be positive");
  return c;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config: invalid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string to_json_text(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["mesh"] = {{"file", c.mesh.file},
               {"interest", {c.mesh.interest.x0, c.mesh.interest.x1, c.mesh.interest.y0, c.mesh.interest.y1}},
               {"extension", c.mesh.extension},
               {"h", c.mesh.h}};
  j["model"] = {{"class", c.model.cls}, {"basis", c.model.basis}, {"cns", c.model.cns},
                {"order", c.model.order}, {"eps", c.model.eps}, {"nu_fixed", c.model.nu_fixed}};
  const PriorInputs& p = c.priors;
  j["priors"] = {{"C_rho", p.C_rho},       {"C_sigma", p.C_sigma},       {"C_a", p.C_a},
                 {"C_nu", p.C_nu},         {"C_nu_hpd", p.C_nu_hpd},     {"nu_max", p.nu_max},
                 {"C_sigma_n", p.C_sigma_n}, {"C_ns_rho", p.C_ns_rho}, {"C_ns_sigma", p.C_ns_sigma},
                 {"C_ns_v", p.C_ns_v}};
  j["optimizer"] = optimizer_json(c.optimizer);
  j["init"] = {{"rho0", c.init.rho0}, {"sigma0", c.init.sigma0}, {"nu", c.init.nu},
               {"sigma_n2", c.init.sigma_n2}, {"vx0", c.init.vx0}, {"vy0", c.init.vy0}};
  j["io"] = {{"data", c.io.data}, {"locations", c.io.locations}, {"truth", c.io.truth},
             {"prediction", c.io.prediction}, {"fit", c.io.fit}, {"output_dir", c.io.output_dir}};
  j["calibration"] = {{"grid", c.calibration.grid}, {"n_mc", c.calibration.n_mc},
                      {"log_tau_lo", c.calibration.log_tau_lo}, {"log_tau_hi", c.calibration.log_tau_hi}};
  j["simulate"] = {{"generator", generator_json(c.simulate.generator)}, {"n_obs", c.simulate.n_obs},
                   {"replicates", c.simulate.replicates}, {"noise_var", c.simulate.noise_var},
                   {"grid", c.simulate.grid}};
  json gens = json::array(), cands = json::array();
  for (const auto& g : c.study.generators) gens.push_back(generator_json(g));
  for (const auto& cd : c.study.candidates)
    cands.push_back({{"class", class_key(cd.cls)}, {"basis", cd.basis_count}, {"cns", cd.c_ns}});
  j["study"] = {{"paper_scale", c.study.paper_scale}, {"replicates", c.study.replicates},
                {"n_obs", c.study.n_obs}, {"noise_var", c.study.noise_var}, {"grid", c.study.grid},
                {"init_spread", c.study.init_spread}, {"optimizer", optimizer_json(c.study.optimizer)},
                {"generators", gens}, {"candidates", cands}};
  return j.dump(2);
}

StudyConfig study_config(const RunConfig& c) {
  StudyConfig s;
  s.domain = c.mesh.interest;
  s.extension = c.mesh.extension;
  s.mesh_h = c.mesh.h;
  s.generators = c.study.generators;
  s.replicates = c.study.replicates;
  s.n_obs = c.study.n_obs;
  s.candidates = c.study.candidates;
  s.noise_var = c.study.noise_var;
  s.grid = c.study.grid;
  s.seed = c.seed;
  s.order = c.model.order;
  s.priors = c.priors;
  s.adam = c.study.optimizer;
  s.calibration = c.calibration;
  s.init_spread = c.study.init_spread;
  s.threads = c.threads;
  if (c.study.paper_scale) s = paper_scale(s);
  return s;
}

StudyConfig paper_scale(StudyConfig s) {
  s.replicates = 25;
  s.n_obs = {125, 500, 1000};
  s.mesh_h = 0.59;
  s.candidates.clear();
  for (ModelClass cls : {ModelClass::NfS, ModelClass::FS}) {
    CandidateSpec c;
    c.cls = cls;
    s.candidates.push_back(c);
  }
  for (ModelClass cls : {ModelClass::NfNs, ModelClass::FNs})
    for (int basis : {8, 16})
      for (double cns : {2.0, 5.0, 10.0}) {
        CandidateSpec c;
        c.cls = cls;
        c.basis_count = basis;
        c.c_ns = cns;
        s.candidates.push_back(c);
      }
  return s;
}

TriMesh make_mesh(const MeshConfig& m) {
  if (!m.file.empty()) return load_mesh(m.file);
  return build_rect_mesh(m.interest, m.extension, m.h);
}

}  // namespace fracspde
