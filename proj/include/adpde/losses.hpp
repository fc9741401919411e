#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "adpde/repr.hpp"
#include "adpde/solver.hpp"

namespace adpde {

enum class FitMode { PhysicsInformed, TransportInformed };

/// Gradients of loss_vd with respect to the prediction, flat blocks.
struct VdGrad {
  std::vector<double> v_bar, v;  ///< ndim blocks
  std::vector<double> d_bar, d;  ///< stored-entry blocks
  std::vector<double> a;
};

/// Domain mean of |Vb - Vb^| + |V - V^| + |Db - Db^|_F + |D - D^|_F + |A - A^|.
/// Norms are not squared; their subgradient at zero is taken as 0.
double loss_vd(const DerivedFields& truth, const DerivedFields& pred,
               VdGrad* grad = nullptr);

struct UlGrad {
  std::vector<Mat> u;       ///< per cell
  std::vector<double> lam;  ///< ndim blocks
};

/// Domain mean of sum_i min(|u_i + u^_i|, |u_i - u^_i|) + |Lambda - Lambda^|.
/// Throws ConfigError on non-orthonormal frames.
double loss_ul(std::span<const Mat> truth_u,
               std::span<const std::array<double, 3>> truth_lam,
               std::span<const Mat> pred_u,
               std::span<const std::array<double, 3>> pred_lam, int d,
               UlGrad* grad = nullptr);

/// Domain mean of ((1 - A) - sigma^)^2.
double loss_sigma(const ScalarField& a_truth, const ScalarField& sigma_hat,
                  std::vector<double>* grad = nullptr);

/// Mean squared error over every cell of every frame.
double loss_cc(const TimeSeries& observed, const TimeSeries& predicted);

/// (1/N) sum over cells of |grad v_k|^2 for each velocity component plus
/// |grad D_e|^2 for each stored tensor entry.
double loss_ss(const VectorField& v, const TensorField& d,
               std::vector<double>* grad_v = nullptr,
               std::vector<double>* grad_d = nullptr);

struct LossPieces {
  std::optional<double> vd, ul, cc, ss, sigma;
};

struct LossWeights {
  double w_ul = 0.5;
  double w_ss = 0.1;
  double w_sigma = 0.5;
};

struct TotalLoss {
  double value = 0.0;
  bool sigma_active = false;
};

/// PhysicsInformed: vd + w_ul ul. TransportInformed: cc + w_ss ss
/// + w_sigma sigma, the last term only when present.
TotalLoss total_loss(FitMode mode, const LossPieces& pieces,
                     const LossWeights& w);

}  // namespace adpde
