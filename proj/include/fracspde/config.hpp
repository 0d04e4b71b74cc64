#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fracspde/study.hpp"

namespace fracspde {

struct MeshConfig {
  /// Mesh file; when empty the mesh is built from the fields below.
  std::string file;
  Rect interest{0.0, 20.0, 0.0, 20.0};
  double extension = 20.0;
  double h = 1.62;
};

struct ModelConfig {
  std::string cls = "f-s";
  int basis = 8;
  double cns = 10.0;
  int order = 1;
  double eps = 1e-4;
  double nu_fixed = 1.0;
};

/// Starting point of a fit on natural scales.
struct InitConfig {
  double rho0 = 10.0;
  double sigma0 = 1.0;
  double nu = 0.5;
  double sigma_n2 = 0.1;
  double vx0 = 0.0;
  double vy0 = 0.0;
};

struct IoConfig {
  std::string data;
  std::string locations;
  std::string truth;
  std::string prediction;
  std::string fit;
  std::string output_dir = "out";
};

struct SimulateConfig {
  GeneratorSpec generator;
  int n_obs = 500;
  int replicates = 1;
  double noise_var = 0.1;
  int grid = 100;
};

struct StudySection {
  bool paper_scale = false;
  int replicates = 5;
  std::vector<int> n_obs{125, 500};
  double noise_var = 0.1;
  int grid = 100;
  double init_spread = 0.5;
  AdamOptions optimizer = study_optimizer();
  std::vector<GeneratorSpec> generators = StudyConfig::desk().generators;
  std::vector<CandidateSpec> candidates = StudyConfig::desk().candidates;
};

struct RunConfig {
  std::uint64_t seed = 20240601;
  int threads = 1;
  MeshConfig mesh;
  ModelConfig model;
  PriorInputs priors;
  AdamOptions optimizer;
  InitConfig init;
  IoConfig io;
  CalibrationOptions calibration;
  SimulateConfig simulate;
  StudySection study;
};

/// Parses a JSON configuration, filling defaults. Unknown keys and type
/// mismatches raise InputError naming the dotted key path.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);
/// Fully resolved configuration as pretty-printed JSON.
std::string to_json_text(const RunConfig& cfg);

StudyConfig study_config(const RunConfig& cfg);
/// Paper-scale study: 25 replicates, counts {125, 500, 1000}, a mesh of about
/// 10^4 vertices, both stationary classes and every B8/B16, C2/C5/C10 variant
/// of the non-stationary classes.
StudyConfig paper_scale(StudyConfig base);
TriMesh make_mesh(const MeshConfig& mesh);

}  // namespace fracspde
