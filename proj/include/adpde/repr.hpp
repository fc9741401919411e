#pragma once

#include <array>
#include <span>
#include <vector>

#include "adpde/fields.hpp"
#include "adpde/small_matrix.hpp"

namespace adpde {

/// Lower bound applied to generated and fitted anomaly values.
inline constexpr double kAnomalyFloor = 0.05;

/// Psi: one scalar component in 2D, three in 3D.
struct VelocityPotential {
  std::vector<ScalarField> components;

  static VelocityPotential zeros(const Grid& g);
  const Grid& grid() const { return components.front().grid(); }
};

/// Per-cell spectral parameters of the diffusion tensor: the d(d-1)/2
/// strictly-upper-triangular coefficients of B and the d eigenvalues Lambda.
struct DiffusionSpectralParams {
  std::vector<ScalarField> b;
  std::vector<ScalarField> lambda;

  static DiffusionSpectralParams zeros(const Grid& g);
};

/// Anomaly value field A in (0, 1]; 1 means normal.
struct AnomalyField {
  ScalarField a;

  /// Throws ConfigError unless every value lies in (0, 1].
  static AnomalyField checked(ScalarField a);
  static AnomalyField normal(const Grid& g) { return {ScalarField(g, 1.0)}; }
};

struct TransportParams {
  VelocityPotential potential;
  DiffusionSpectralParams spectral;
  AnomalyField anomaly;
  ScalarField sigma;

  /// Psi = 0, B = 0, Lambda = 0, A = 1, sigma = 0.
  static TransportParams neutral(const Grid& g);
  const Grid& grid() const { return sigma.grid(); }
  /// Shape, sign and range checks; throws ConfigError.
  void validate() const;
};

struct VelocityPair {
  VectorField v_bar;  ///< curl(Psi), the anomaly-free velocity
  VectorField v;      ///< curl(A Psi)
};

/// v_bar = curl(Psi) and v = curl(A Psi), the latter taken directly on the
/// product field. Both are discretely divergence-free in the interior.
VelocityPair build_velocity(const TransportParams& params);

/// U = exp(B - B^T) for the packed upper-triangular coefficients b of a
/// d x d matrix (d = 2: rotation, d = 3: Rodrigues).
Mat matrix_exp_skew(std::span<const double> b, int d);

/// Vector-Jacobian product of matrix_exp_skew: returns dL/db given dL/dU.
std::array<double, 3> matrix_exp_skew_vjp(std::span<const double> b, int d,
                                          const Mat& grad_u);

struct DiffusionBuild {
  TensorField d_bar;                         ///< U Lambda U^T
  TensorField d;                             ///< A * d_bar
  std::vector<Mat> u;                        ///< per-cell rotation
  std::vector<std::array<double, 3>> lam;    ///< per-cell Lambda
};

DiffusionBuild build_diffusion(const TransportParams& params);

struct FeatureMaps {
  ScalarField vmag;   ///< |V|_2
  ScalarField trace;  ///< tr(D)
  ScalarField fa;     ///< fractional anisotropy
};

/// FA = sqrt(d/(d-1)) |lambda - mean(lambda)| / |lambda|, evaluated through
/// the rotation-invariant Frobenius form; 0 for a zero tensor.
FeatureMaps feature_maps(const VectorField& v, const TensorField& d);

/// Everything derived from a parameter bundle, shared by losses and metrics.
struct DerivedFields {
  VectorField v_bar;
  VectorField v;
  TensorField d_bar;
  TensorField d;
  std::vector<Mat> u;
  std::vector<std::array<double, 3>> lam;
  ScalarField a;
};

DerivedFields derive(const TransportParams& params);

}  // namespace adpde
