#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "fracspde/model.hpp"
#include "fracspde/predict.hpp"

namespace fracspde {

struct GeneratorSpec {
  std::string name = "stationary";
  bool nonstationary = false;
  double nu = 0.5;
  double rho0 = 10.0;
  double sigma0 = 1.0;
  double vx0 = 0.0;
  double vy0 = 0.0;
  /// Basis of the spatially varying anisotropy.
  int basis_count = 8;
  /// Threshold whose calibrated penalty is used to draw the coefficients.
  double c_ns = 10.0;
  /// Drawn from the spectral prior when empty.
  Vector alpha_vx, alpha_vy;
};

struct CandidateSpec {
  ModelClass cls = ModelClass::FS;
  int basis_count = 8;
  double c_ns = 10.0;

  /// "F-S", or "F-NS B8-C10" for non-stationary classes.
  std::string label() const;
};

/// Optimizer settings of the study fits: prior-scaled steps of 0.05, stopping
/// at a relative change of 1e-5 or after 500 iterations.
AdamOptions study_optimizer();

struct StudyConfig {
  Rect domain{0.0, 20.0, 0.0, 20.0};
  double extension = 20.0;
  double mesh_h = 1.62;
  std::vector<GeneratorSpec> generators;
  int replicates = 5;
  /// Nested subsets; the largest count is the number of sampled locations.
  std::vector<int> n_obs{125, 500};
  std::vector<CandidateSpec> candidates;
  double noise_var = 0.1;
  int grid = 100;
  std::uint64_t seed = 20240601;
  int order = 1;
  PriorInputs priors;
  AdamOptions adam = study_optimizer();
  CalibrationOptions calibration;
  /// Initial stationary parameters are the true values times U(1 - s, 1 + s).
  double init_spread = 0.5;
  int threads = 1;

  /// Desk-scale defaults: both generators, the four classes with B8-C10.
  static StudyConfig desk();
  void validate() const;
};

struct Dataset {
  Matrix obs_locations;  ///< n_max x 2, subsets are leading rows
  Vector obs_values;
  Vector obs_latent;
  Matrix grid_locations;
  Vector grid_truth;
};

/// Deterministic engine seeded from the study seed and a list of tags.
std::mt19937_64 derived_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// Study state: mesh, resolved generators and calibrated penalties.
class Study {
 public:
  explicit Study(StudyConfig config);

  const StudyConfig& config() const { return cfg_; }
  const TriMesh& mesh() const { return *mesh_; }
  std::shared_ptr<const TriMesh> mesh_ptr() const { return mesh_; }

  Dataset dataset(int generator, int replicate) const;
  /// Penalty parameters (kappa, sigma, vx, vy) for a basis size and threshold.
  std::array<double, 4> penalty(int basis_count, double c_ns) const;

 private:
  StudyConfig cfg_;
  std::shared_ptr<const TriMesh> mesh_;
  mutable std::vector<std::tuple<int, double, std::array<double, 4>>> penalties_;
};

Dataset generate_dataset(const Study& study, int generator, int replicate);

struct StudyRow {
  std::string generator;
  std::string candidate;
  int n_obs = 0;
  int replicate = 0;
  std::string status = "ok";
  double rmse = 0.0, crps = 0.0;
  double nu = 0.0, rho0 = 0.0, a0 = 0.0, psi0_deg = 0.0, sigma0 = 0.0, sigma_n = 0.0;
  double logpost = 0.0;
  int iterations = 0;
  bool converged = false;
  double runtime_s = 0.0;
};

/// Fits one candidate to the first `n_obs` observations of a dataset and
/// scores the latent-scale prediction on the grid.
StudyRow run_cell(const Study& study, const Dataset& data, int generator, int candidate,
                  int n_obs, int replicate);

/// Runs every (generator, replicate, candidate, n_obs) cell. Rows already in
/// `results_csv` are kept and skipped. Runtimes go to `timing_csv` when
/// non-empty, keeping the results file reproducible.
std::vector<StudyRow> run_study(const Study& study, const std::string& results_csv,
                                const std::string& timing_csv = "", std::ostream* log = nullptr);

std::string study_csv_header();
std::string to_csv(const StudyRow& row);
StudyRow parse_study_row(const std::string& line);
std::vector<StudyRow> read_study_csv(const std::string& path);

struct CellSummary {
  std::string generator, candidate;
  int n_obs = 0;
  int count = 0;
  double mean_rmse = 0.0, mean_crps = 0.0;
};

/// Average RMSE and CRPS per (generator, candidate, n_obs), over ok rows.
std::vector<CellSummary> summarize(const std::vector<StudyRow>& rows);

struct ParamSummary {
  double mean = 0.0;
  std::optional<double> sd;
};

struct BiasRow {
  std::string generator, candidate;
  int n_obs = 0;
  int count = 0;
  ParamSummary nu, rho0, a0, psi0_deg, sigma0, sigma_n;
};

/// Mean and empirical sd of the stationary parameter estimates; sd is absent
/// for a single replicate.
std::vector<BiasRow> estimate_bias(const std::vector<StudyRow>& rows);
/// CSV with a mean and an sd column per parameter; absent sd is left empty.
void write_bias(std::ostream& os, const std::vector<BiasRow>& rows);
/// Text table with entries "mean (sd)" and sigma_N in units of 1e-1.
void write_bias_table(std::ostream& os, const std::vector<BiasRow>& rows);
void write_summary(std::ostream& os, const std::vector<CellSummary>& rows);

}  // namespace fracspde
