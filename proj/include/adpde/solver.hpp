#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adpde/fields.hpp"
#include "adpde/repr.hpp"

namespace adpde {

enum class AdvectionForm {
  Incompressible,  ///< -V . grad C
  Conservative,    ///< -div(V C)
};

enum class Integrator { RK4Fixed, RK45Adaptive };

struct SolverConfig {
  double dt = 0.01;                ///< output interval
  std::optional<double> substep;   ///< empty selects the CFL-derived step
  double cfl_safety = 0.8;
  AdvectionForm form = AdvectionForm::Incompressible;
  bool stochastic = false;
  std::uint64_t seed = 0;
  Integrator integrator = Integrator::RK4Fixed;
  double rtol = 1e-6;  ///< RK45 only
  double atol = 1e-9;  ///< RK45 only

  void validate() const;
};

/// Ordered snapshots at uniform spacing dt.
struct TimeSeries {
  Grid grid;
  double dt = 0.0;
  std::vector<ScalarField> frames;

  std::size_t size() const { return frames.size(); }
  /// Throws ConfigError on fewer than 2 frames, mixed grids, dt <= 0 or
  /// non-finite samples.
  void validate() const;
  TimeSeries slice(std::size_t first, std::size_t count) const;
};

/// The linear map C -> RHS(C) for fixed (V, D), upwind advection plus
/// tensor diffusion. Also provides the transpose and the parameter
/// derivative needed by the adjoint.
class TransportOperator {
 public:
  TransportOperator(const Grid& g, const VectorField& v, const TensorField& d,
                    AdvectionForm form);

  const Grid& grid() const { return grid_; }
  /// out = L c
  void apply(std::span<const double> c, std::span<double> out) const;
  /// out = L^T w
  void apply_transpose(std::span<const double> w, std::span<double> out) const;
  /// gv (ndim blocks) += d(w^T L c)/dv, gd (stored entry blocks) += d/dD.
  void accumulate_param_grad(std::span<const double> w,
                             std::span<const double> c, std::span<double> gv,
                             std::span<double> gd) const;

 private:
  void advection(std::span<const double> c, std::span<double> out,
                 bool transpose) const;
  void diffusion(std::span<const double> c, std::span<double> out,
                 bool transpose) const;

  Grid grid_;
  AdvectionForm form_;
  std::vector<std::vector<double>> face_u_;  // per axis, indexed by left cell
  std::vector<std::vector<double>> dent_;    // stored D entries
};

ScalarField advection_rhs(const ScalarField& c, const VectorField& v,
                          AdvectionForm form);
ScalarField diffusion_rhs(const ScalarField& c, const TensorField& d);

/// cfl_safety * min(1 / sum_k(max|v_k| / h_k), min(h^2) / (2 d lambda_max));
/// cfg.dt when V and D both vanish.
double cfl_max_dt(const VectorField& v, const TensorField& d,
                  const SolverConfig& cfg);

/// Number of equal substeps per output interval and their length.
struct SubstepPlan {
  std::size_t count = 1;
  double step = 0.0;
};
/// Throws NumericalError when an explicit substep exceeds the bound.
SubstepPlan plan_substeps(double bound, const SolverConfig& cfg);

/// Per-cell flag: 1 where the cell is driven by boundary data (CauchyPatch
/// faces), 0 elsewhere. All zero on NeumannZeroFlux grids.
std::vector<std::uint8_t> boundary_mask(const Grid& g);

/// Work buffers for rk4_substep.
struct Rk4Scratch {
  std::vector<double> k1, k2, k3, k4, x;
  void resize(std::size_t n);
};

/// One classical RK4 step of dc/dt = f(c), f = L c off the mask and
/// f = rate on it (rate may be empty for zero).
void rk4_substep(const TransportOperator& op, std::span<const std::uint8_t> mask,
                 std::span<const double> rate, double h, std::span<double> c,
                 Rk4Scratch& s);

/// Advances c0 through n_frames - 1 output intervals (frames include c0).
/// On CauchyPatch grids boundary cells follow `boundary` (one frame per
/// output frame) when supplied and are held at c0 otherwise.
TimeSeries integrate(const ScalarField& c0, const TransportParams& params,
                     const SolverConfig& cfg, std::size_t n_frames,
                     const TimeSeries* boundary = nullptr);

struct WellposednessReport {
  double lipschitz = 0.0;  ///< max over adjacent pairs of |delta|^2 / |dx|^2
  double growth = 0.0;     ///< max over cells of |.|^2 / (1 + |x|^2)
};

WellposednessReport wellposedness_report(const TransportParams& params);

}  // namespace adpde
