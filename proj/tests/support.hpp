#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "adpde/fields.hpp"
#include "adpde/repr.hpp"

namespace testing_support {

using namespace adpde;

inline ScalarField random_scalar(const Grid& g, std::mt19937_64& rng,
                                 double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ScalarField f(g);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = u(rng);
  return f;
}

inline VectorField random_vector(const Grid& g, std::mt19937_64& rng) {
  VectorField v(g);
  for (int c = 0; c < g.ndim(); ++c) v[c] = random_scalar(g, rng);
  return v;
}

/// Random symmetric PSD tensor per cell: M M^T with M uniform.
inline TensorField random_psd(const Grid& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int d = g.ndim();
  TensorField t(g);
  for (std::size_t c = 0; c < g.size(); ++c) {
    double m[3][3];
    for (auto& row : m)
      for (double& x : row) x = u(rng);
    for (int r = 0; r < d; ++r)
      for (int k = r; k < d; ++k) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += m[r][j] * m[k][j];
        t.set(c, r, k, s);
      }
  }
  return t;
}

/// Smooth-ish random parameters: Psi and B uniform, Lambda in [0, 1],
/// A in [0.05, 1], sigma in [0, 0.5].
inline TransportParams random_params(const Grid& g, std::mt19937_64& rng,
                                     double psi_scale = 1.0) {
  TransportParams p = TransportParams::neutral(g);
  for (auto& c : p.potential.components) {
    c = random_scalar(g, rng, -psi_scale, psi_scale);
  }
  for (auto& b : p.spectral.b) b = random_scalar(g, rng, -3.0, 3.0);
  for (auto& l : p.spectral.lambda) l = random_scalar(g, rng, 0.0, 1.0);
  p.anomaly.a = random_scalar(g, rng, kAnomalyFloor, 1.0);
  p.sigma = random_scalar(g, rng, 0.0, 0.5);
  return p;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing_support
