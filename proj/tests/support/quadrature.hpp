#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (b <= a) return 0.0;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Gaussian CRPS as the integral of (F(t) - 1{t >= y})^2.
inline double crps_by_quadrature(double m, double s, double y) {
  auto cdf = [&](double t) { return 0.5 * std::erfc(-(t - m) / (s * std::sqrt(2.0))); };
  const double lo = std::min(m - 12.0 * s, y), hi = std::max(m + 12.0 * s, y);
  return simpson([&](double t) { return cdf(t) * cdf(t); }, lo, y, 40000) +
         simpson([&](double t) { return (1.0 - cdf(t)) * (1.0 - cdf(t)); }, y, hi, 40000);
}

/// Shortest 95% interval of a Beta(p, q) density by bisection on the density
/// level, with masses from a midpoint rule on a fine grid.
inline double hpd_width_by_levels(double p, double q) {
  const int n = 200000;
  const double lb = std::lgamma(p) + std::lgamma(q) - std::lgamma(p + q);
  std::vector<double> dens(n);
  const double h = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) * h;
    dens[i] = std::exp((p - 1) * std::log(x) + (q - 1) * std::log1p(-x) - lb);
  }
  double lo = 0.0, hi = *std::max_element(dens.begin(), dens.end());
  for (int it = 0; it < 100; ++it) {
    const double level = 0.5 * (lo + hi);
    double mass = 0.0;
    for (double d : dens)
      if (d >= level) mass += d * h;
    (mass > 0.95 ? lo : hi) = level;
  }
  double width = 0.0, mass = 0.0;
  for (double d : dens)
    if (d >= lo) {
      width += h;
      mass += d * h;
    }
  // Interpolate the last partial cell using the edge density.
  return width - (mass - 0.95) / lo;
}

}  // namespace oracle
