#pragma once

#include <array>
#include <cstdint>

#include "adpde/fields.hpp"
#include "adpde/repr.hpp"
#include "adpde/rng.hpp"
#include "adpde/solver.hpp"

namespace adpde {

struct SimProtocol {
  Grid grid;
  std::size_t n_frames = 40;
  double dt = 0.01;
  double lambda_lo = 0.0, lambda_hi = 1.0;
  double psi_lo = -10.0, psi_hi = 10.0;
  double anomaly_prob = 0.5;
  double init_std = 2.0;
  std::uint64_t seed = 0;
  AdvectionForm form = AdvectionForm::Incompressible;
  bool stochastic = true;

  /// 64 x 64 cells at 1 mm.
  static SimProtocol gaussian2d(std::uint64_t seed = 0);
  /// 32^3 cells at 1 mm, same generator.
  static SimProtocol gaussian3d(std::uint64_t seed = 0);

  void validate() const;
  SolverConfig solver_config(std::uint64_t noise_seed) const;
};

struct SimSample {
  TransportParams params;
  TimeSeries series;
  bool has_anomaly = false;
};

/// exp(-|x - center|^2 / (2 std^2)), coordinates in mm.
ScalarField gaussian_initial(const Grid& g, const std::array<double, 3>& center,
                             double std);

struct RandomPotentials {
  VelocityPotential psi;
  std::vector<ScalarField> b;
  std::vector<ScalarField> lambda;
};

/// Uniform per-cell Psi and Lambda draws followed by one 3-point box
/// average per axis; B is one field-wide dominant direction.
RandomPotentials random_potentials(const SimProtocol& p, CounterRng& rng);

/// 1 - a0 exp(-(x-c)^T S^-1 (x-c) / 2), clamped to [kAnomalyFloor, 1].
AnomalyField anomaly_field(const Grid& g, CounterRng& rng);

/// One-pass 3-point box average along every axis (ends average the
/// available neighbours).
ScalarField box_smooth(const ScalarField& f);

SimSample make_sample(const SimProtocol& p, CounterRng& rng);
/// Sample `index` of the protocol's corpus; depends only on (seed, index).
SimSample make_sample(const SimProtocol& p, std::uint32_t index);

}  // namespace adpde
