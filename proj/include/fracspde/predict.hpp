#pragma once

#include <iosfwd>

#include "fracspde/model.hpp"

namespace fracspde {

enum class Scale { Latent, Observation };

const char* to_string(Scale s);

struct Prediction {
  Matrix locations;
  Vector mean;
  Vector sd;
  Scale scale = Scale::Latent;
};

/// Mean S_P mu_C and sd from the diagonal of S_P Q_C^{-1} S_P^T, with
/// S_P = [A_P P_R, X_P]. `design` may have zero columns when the model has
/// no covariates. Variances come from solves against blocks of `block`
/// columns of S_P^T.
Prediction predict(const Posterior& post, const TriMesh& mesh, const Matrix& locations,
                   const Matrix& design, Scale scale, int replicate = 0, Index block = 64);

/// CRPS of N(mean, sd^2) at y.
double crps_gaussian(double mean, double sd, double y);

struct Scores {
  double rmse = 0.0;
  double crps = 0.0;
};

Scores score_set(const Prediction& pred, const Vector& truth);

/// CSV with header x,y,mean,sd,scale.
void write_prediction(std::ostream& os, const Prediction& pred);

}  // namespace fracspde
