#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adpde/losses.hpp"
#include "adpde/repr.hpp"
#include "adpde/solver.hpp"

namespace adpde {

struct FitConfig {
  double w_ul = 0.5;
  double w_ss = 0.1;
  double w_sigma = 0.5;
  std::size_t n_in = 10;
  std::size_t n_out = 10;
  std::size_t window_stride = 0;  ///< 0 selects n_in - 1
  std::size_t max_iters = 300;
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  FitMode mode = FitMode::TransportInformed;
  AdvectionForm form = AdvectionForm::Incompressible;
  double cfl_safety = 0.8;
  double tolerance = 1e-14;     ///< initial loss at or below this ends the fit
  std::size_t global_iters = 150;  ///< spatially uniform warm start, 0 disables
  double global_step = 0.05;
  bool check_gradient = true;
  std::uint64_t seed = 0;       ///< direction of the entry gradient check
  std::optional<TransportParams> init;

  LossWeights weights() const { return {w_ul, w_ss, w_sigma}; }
  void validate(std::size_t n_frames) const;
};

struct FitResult {
  TransportParams params_hat;
  std::vector<double> loss_trace;   ///< best-so-far, entry 0 is the start
  std::vector<double> raw_trace;    ///< loss at each evaluated iterate
  std::vector<double> grad_norm;    ///< gradient norm at each iterate
  double grad_check = 0.0;          ///< relative adjoint vs FD error at entry
  std::size_t iterations = 0;
  bool sigma_active = false;
};

enum class Block { Psi, B, Lambda, A, Sigma };
const char* block_name(Block b);

/// Unconstrained parameter vector: Psi and B as is, Lambda and sigma via
/// softplus, A = eps + (1 - eps) sigmoid.
struct RawParams {
  Grid grid;
  std::vector<double> x;

  static RawParams from_params(const TransportParams& p, const Grid& grid);
  TransportParams to_params() const;

  std::size_t offset(Block b) const;
  std::size_t count(Block b) const;
};

double softplus(double r);
double inv_softplus(double y);
double anomaly_from_raw(double r);
double raw_from_anomaly(double a);

/// Frame offsets of the sliding windows over a series of n_frames.
std::vector<std::size_t> window_starts(std::size_t n_frames, const FitConfig& cfg);

struct LossEval {
  double loss = 0.0;
  LossPieces pieces;
  bool sigma_active = false;
  std::vector<double> grad;  ///< empty unless requested
};

/// Total loss of the configured mode and, when want_grad, its exact gradient
/// with respect to every raw parameter (adjoint of the RK4 forward pass).
/// Throws NumericalError naming the block on a non-finite gradient.
LossEval evaluate(const RawParams& raw, const TimeSeries& observed,
                  const FitConfig& cfg, const TransportParams* truth,
                  bool want_grad);

/// Recovers parameters from an observed series. truth is required for
/// PhysicsInformed mode and, when given in TransportInformed mode,
/// activates the sigma term. Throws NumericalError on a NaN loss, or when
/// iterations ran and neither the warm start nor the per-cell stage
/// improved on the entry loss.
FitResult fit(const TimeSeries& observed, const FitConfig& cfg,
              const TransportParams* truth = nullptr);

/// Re-integrates the series from its first frame with the fitted parameters
/// (CauchyPatch boundary from the observation, deterministic).
TimeSeries reconstruct(const TimeSeries& observed, const TransportParams& params,
                       const FitConfig& cfg);

}  // namespace adpde
