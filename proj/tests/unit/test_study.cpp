#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fracspde/errors.hpp"
#include "fracspde/study.hpp"

using namespace fracspde;

namespace {

StudyConfig tiny_config() {
  StudyConfig c = StudyConfig::desk();
  c.domain = Rect{0, 6, 0, 6};
  c.extension = 2.0;
  c.mesh_h = 1.0;
  c.grid = 6;
  c.replicates = 1;
  c.n_obs = {6, 12};
  c.generators.resize(1);
  c.generators[0].rho0 = 3.0;
  CandidateSpec fs;
  fs.cls = ModelClass::FS;
  c.candidates = {fs};
  c.adam.max_iterations = 20;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fracspde_test_study";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

StudyRow row(const std::string& gen, const std::string& cand, int n, int rep, double nu, double rmse) {
  StudyRow r;
  r.generator = gen;
  r.candidate = cand;
  r.n_obs = n;
  r.replicate = rep;
  r.nu = nu;
  r.rmse = rmse;
  r.crps = rmse / 2;
  r.rho0 = 10.0 + nu;
  r.sigma_n = 0.3;
  return r;
}

}  // namespace

TEST_CASE("derived engines are deterministic and tag dependent") {
  auto a = derived_rng(5, {1, 2, 3}), b = derived_rng(5, {1, 2, 3});
  auto c = derived_rng(5, {1, 2, 4}), d = derived_rng(6, {1, 2, 3});
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(x != d());
}

TEST_CASE("candidate labels") {
  CandidateSpec c;
  c.cls = ModelClass::FS;
  CHECK(c.label() == "F-S");
  c.cls = ModelClass::FNs;
  c.basis_count = 8;
  c.c_ns = 10;
  CHECK(c.label() == "F-NS B8-C10");
  c.cls = ModelClass::NfNs;
  c.basis_count = 16;
  c.c_ns = 2;
  CHECK(c.label() == "NF-NS B16-C2");
}

TEST_CASE("study configuration validation") {
  CHECK_NOTHROW(StudyConfig::desk().validate());
  CHECK(StudyConfig::desk().generators.size() == 2);
  CHECK(StudyConfig::desk().candidates.size() == 4);
  auto bad = [](auto change) {
    StudyConfig c = StudyConfig::desk();
    change(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.replicates = 0; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.n_obs = {}; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.n_obs = {0}; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.noise_var = -1; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.init_spread = 1.0; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.generators[1].name = "stationary"; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.candidates[1].c_ns = 1.0; }).validate(), InputError);
  CHECK_THROWS_AS(bad([](StudyConfig& c) { c.generators.clear(); }).validate(), InputError);
}

TEST_CASE("datasets are deterministic with nested subsets") {
  const Study s(tiny_config());
  const Dataset a = s.dataset(0, 0), b = s.dataset(0, 0), c = s.dataset(0, 1);
  CHECK(a.obs_values == b.obs_values);
  CHECK(a.grid_truth == b.grid_truth);
  CHECK(a.obs_values != c.obs_values);
  CHECK(a.obs_locations.rows() == 12);
  CHECK(a.grid_locations.rows() == 36);
  const Rect& r = s.config().domain;
  CHECK(a.obs_locations.col(0).minCoeff() >= r.x0);
  CHECK(a.obs_locations.col(0).maxCoeff() <= r.x1);
  CHECK(a.obs_locations.col(1).minCoeff() >= r.y0);
  CHECK(a.obs_locations.col(1).maxCoeff() <= r.y1);
  // Grid cell centres.
  CHECK(a.grid_locations(0, 0) == doctest::Approx(0.5));
  CHECK(a.grid_locations(0, 1) == doctest::Approx(0.5));

  StudyConfig small = tiny_config();
  small.n_obs = {6};
  const Dataset d = Study(small).dataset(0, 0);
  CHECK(d.obs_locations == a.obs_locations.topRows(6));
}

TEST_CASE("observation noise") {
  StudyConfig c = tiny_config();
  c.noise_var = 0.0;
  const Dataset clean = Study(c).dataset(0, 0);
  CHECK(clean.obs_values == clean.obs_latent);

  c.noise_var = 0.1;
  c.n_obs = {100000};
  const Dataset noisy = Study(c).dataset(0, 0);
  const Vector e = noisy.obs_values - noisy.obs_latent;
  const double mean = e.mean();
  const double var = (e.array() - mean).square().sum() / (e.size() - 1);
  CHECK(std::abs(var - 0.1) < 0.005);
  CHECK(std::abs(mean) < 0.005);
}

TEST_CASE("csv round trip") {
  StudyRow r = row("stationary", "F-NS B8-C10", 125, 3, 0.61, 0.2);
  r.iterations = 77;
  r.converged = true;
  r.logpost = -123.456;
  r.psi0_deg = -12.5;
  const std::string line = to_csv(r);
  const StudyRow p = parse_study_row(line);
  CHECK(p.generator == r.generator);
  CHECK(p.candidate == r.candidate);
  CHECK(p.n_obs == 125);
  CHECK(p.replicate == 3);
  CHECK(p.status == "ok");
  CHECK(p.nu == r.nu);
  CHECK(p.rmse == r.rmse);
  CHECK(p.logpost == r.logpost);
  CHECK(p.psi0_deg == r.psi0_deg);
  CHECK(p.iterations == 77);
  CHECK(p.converged);
  CHECK(to_csv(p) == line);
  const std::string header = study_csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') == 15);
  CHECK_THROWS_AS(parse_study_row("a,b,c"), InputError);
}

TEST_CASE("summaries and bias") {
  std::vector<StudyRow> rows{row("g", "F-S", 10, 0, 0.4, 0.1), row("g", "F-S", 10, 1, 0.6, 0.3),
                             row("g", "F-S", 10, 2, 0.8, 0.5), row("g", "NF-S", 10, 0, 1.0, 0.7)};
  StudyRow failed = row("g", "F-S", 10, 3, 99.0, 99.0);
  failed.status = "failed: x";
  rows.push_back(failed);

  const auto sum = summarize(rows);
  REQUIRE(sum.size() == 2);
  CHECK(sum[0].count == 3);
  CHECK(sum[0].mean_rmse == doctest::Approx(0.3));
  CHECK(sum[0].mean_crps == doctest::Approx(0.15));
  CHECK(sum[1].count == 1);

  const auto bias = estimate_bias(rows);
  REQUIRE(bias.size() == 2);
  CHECK(bias[0].nu.mean == doctest::Approx(0.6));
  REQUIRE(bias[0].nu.sd);
  CHECK(*bias[0].nu.sd == doctest::Approx(0.2));
  CHECK(*bias[0].sigma_n.sd == doctest::Approx(0.0));
  CHECK_FALSE(bias[1].nu.sd);

  std::ostringstream csv;
  write_bias(csv, bias);
  std::string header;
  std::istringstream in(csv.str());
  std::getline(in, header);
  CHECK(header ==
        "generator,candidate,n_obs,count,nu_mean,nu_sd,rho0_mean,rho0_sd,a0_mean,a0_sd,psi0_deg_mean,"
        "psi0_deg_sd,sigma0_mean,sigma0_sd,sigma_n_mean,sigma_n_sd");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line.rfind("g,NF-S,10,1,", 0) == 0);
  CHECK(line.find(",,") != std::string::npos);

  std::ostringstream table;
  write_bias_table(table, bias);
  CHECK(table.str().find("0.6 (0.2)") != std::string::npos);
  CHECK(table.str().find("3.0 (0.0)") != std::string::npos);
}

TEST_CASE("a degenerate study writes one row per count and resumes") {
  const Study s(tiny_config());
  const auto results = scratch("results.csv"), timing = scratch("timing.csv");
  const auto rows = run_study(s, results.string(), timing.string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n_obs == 6);
  CHECK(rows[1].n_obs == 12);
  for (const auto& r : rows) {
    CHECK(r.status == "ok");
    CHECK(std::isfinite(r.rmse));
    CHECK(r.crps > 0);
  }
  const auto read = read_study_csv(results.string());
  REQUIRE(read.size() == 2);
  CHECK(to_csv(read[1]) == to_csv(rows[1]));

  std::ifstream t(timing);
  std::string line;
  int lines = 0;
  while (std::getline(t, line)) ++lines;
  CHECK(lines == 3);

  // Resuming leaves the file untouched.
  std::ifstream before(results);
  const std::string text((std::istreambuf_iterator<char>(before)), {});
  const auto again = run_study(s, results.string());
  CHECK(again.size() == 2);
  std::ifstream after(results);
  CHECK(std::string((std::istreambuf_iterator<char>(after)), {}) == text);

  // A partial file is completed with identical rows.
  {
    std::ofstream partial(results);
    partial << study_csv_header() << '\n' << to_csv(rows[0]) << '\n';
  }
  const auto completed = run_study(s, results.string());
  REQUIRE(completed.size() == 2);
  CHECK(to_csv(completed[1]) == to_csv(rows[1]));
}

TEST_CASE("a cell with too few locations is reported as failed") {
  const Study s(tiny_config());
  const Dataset d = s.dataset(0, 0);
  const StudyRow r = run_cell(s, d, 0, 0, 50, 0);
  CHECK(r.status.rfind("failed", 0) == 0);
  CHECK(std::isnan(r.rmse));
}
