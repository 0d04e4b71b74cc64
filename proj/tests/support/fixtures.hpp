#pragma once

#include <memory>
#include <random>

#include "fracspde/model.hpp"

namespace fixture {

using namespace fracspde;

/// Random sparse SPD matrix: random symmetric pattern plus a dominant
/// diagonal.
inline SparseMatrix random_spd(Index n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), coin(0.0, 1.0);
  std::vector<Triplet> trip;
  Vector rowsum = Vector::Zero(n);
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i)
      if (coin(rng) < density) {
        const double v = u(rng);
        trip.emplace_back(int(i), int(j), v);
        trip.emplace_back(int(j), int(i), v);
        rowsum(i) += std::abs(v);
        rowsum(j) += std::abs(v);
      }
  for (Index i = 0; i < n; ++i) trip.emplace_back(int(i), int(i), rowsum(i) + 0.5 + coin(rng));
  return assemble_csc(trip, n);
}

/// Mesh on [0, w]^2 without extension, `side` vertices per edge.
inline std::shared_ptr<const TriMesh> small_mesh(int side, double w = 4.0) {
  return std::make_shared<const TriMesh>(build_rect_mesh(Rect{0.0, w, 0.0, w}, 0.0, w / (side - 1)));
}

inline ObservationSet random_observations(const TriMesh& mesh, Index n, std::mt19937_64& rng,
                                          Index covariates = 0) {
  const Rect& r = mesh.interest();
  std::uniform_real_distribution<double> ux(r.x0, r.x1), uy(r.y0, r.y1);
  std::normal_distribution<double> z;
  ObservationSet obs;
  obs.locations.resize(n, 2);
  obs.values.resize(n);
  obs.design.resize(n, covariates);
  for (Index i = 0; i < n; ++i) {
    obs.locations(i, 0) = ux(rng);
    obs.locations(i, 1) = uy(rng);
    obs.values(i) = z(rng);
    for (Index j = 0; j < covariates; ++j) obs.design(i, j) = j == 0 ? 1.0 : z(rng);
  }
  return obs;
}

inline ModelSpec small_spec(ModelClass cls, const Rect& rect, int basis_count = 8) {
  ModelSpec spec;
  spec.cls = cls;
  PriorInputs in;
  in.C_rho = 2.0;
  spec.prior = derive_hyper(in);
  if (is_nonstationary(cls)) {
    spec.basis = basis_for_count(basis_count, rect);
    spec.penalty.q_ns = spectral_precision(spec.basis);
    spec.penalty.tau = {0.5, 0.7, 0.9, 0.9};
  }
  return spec;
}

/// A parameter vector away from integer nu and the clamp band.
inline Vector random_theta(const Model& m, std::mt19937_64& rng, double nu = -1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const ParamLayout& l = m.layout();
  Vector th = Vector::Zero(l.size);
  th(0) = std::log(1.2) + 0.3 * u(rng);
  th(1) = 0.3 * u(rng);
  th(2) = 0.4 * u(rng);
  th(3) = 0.4 * u(rng);
  th(l.log_sigma_n2) = std::log(0.3) + 0.3 * u(rng);
  if (l.nu >= 0) {
    const double target = nu > 0 ? nu : 0.5 + 0.3 * u(rng);
    const double s = target / m.spec().prior.in.nu_max;
    th(l.nu) = std::log(s / (1.0 - s));
  }
  for (Index i = l.log_sigma_n2 + 1; i < l.size; ++i) th(i) = 0.5 * u(rng);
  return th;
}

}  // namespace fixture
