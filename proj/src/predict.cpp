#include "fracspde/predict.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "fracspde/errors.hpp"

namespace fracspde {

const char* to_string(Scale s) { return s == Scale::Latent ? "latent" : "observation"; }

Prediction predict(const Posterior& post, const TriMesh& mesh, const Matrix& locations,
                   const Matrix& design, Scale scale, int replicate, Index block) {
  const ReplicatePosterior& rp = post.replicate(replicate);
  const Index p = post.covariates;
  if (design.cols() != p) throw DimensionError("predict: design has the wrong number of columns");
  if (p > 0 && design.rows() != locations.rows())
    throw DimensionError("predict: design row count differs from location count");
  if (block < 1) throw std::invalid_argument("predict: block size must be positive");

  const SparseMatrix apr = SparseMatrix(projector(mesh, locations) * post.frac.P_R);
  const Index k = locations.rows();
  const Index m = apr.cols();

  Prediction out;
  out.locations = locations;
  out.scale = scale;
  out.mean = apr * rp.mu.head(m);
  if (p > 0) out.mean += design * rp.mu.tail(p);

  // S_P^T, one column per location.
  const SparseMatrix spt = apr.transpose();
  Vector var(k);
  for (Index start = 0; start < k; start += block) {
    const Index b = std::min(block, k - start);
    Matrix rhs = Matrix::Zero(m + p, b);
    rhs.topRows(m) = Matrix(spt.middleCols(start, b));
    if (p > 0) rhs.bottomRows(p) = design.middleRows(start, b).transpose();
    const Matrix sol = rp.factor->solve(rhs);
    var.segment(start, b) = (rhs.array() * sol.array()).colwise().sum().transpose();
  }
  if (scale == Scale::Observation) var.array() += post.params.sigma_n2;
  out.sd = var.cwiseMax(0.0).cwiseSqrt();
  return out;
}

double crps_gaussian(double mean, double sd, double y) {
  if (!(sd > 0)) throw std::invalid_argument("crps_gaussian: sd must be positive");
  const double z = (y - mean) / sd;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

Scores score_set(const Prediction& pred, const Vector& truth) {
  if (truth.size() != pred.mean.size() || pred.sd.size() != pred.mean.size())
    throw DimensionError("score_set: length mismatch");
  if (truth.size() == 0) throw DimensionError("score_set: empty prediction");
  Scores s;
  double sq = 0.0, cr = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    const double e = truth(i) - pred.mean(i);
    sq += e * e;
    cr += crps_gaussian(pred.mean(i), pred.sd(i), truth(i));
  }
  const double n = static_cast<double>(truth.size());
  s.rmse = std::sqrt(sq / n);
  s.crps = cr / n;
  return s;
}

void write_prediction(std::ostream& os, const Prediction& pred) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "x,y,mean,sd,scale\n";
  for (Index i = 0; i < pred.mean.size(); ++i)
    os << pred.locations(i, 0) << ',' << pred.locations(i, 1) << ',' << pred.mean(i) << ','
       << pred.sd(i) << ',' << to_string(pred.scale) << '\n';
}

}  // namespace fracspde
