#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adpde/fields.hpp"
#include "adpde/solver.hpp"

namespace adpde {

using Mask = std::vector<std::uint8_t>;

struct RaeResult {
  double value = 0.0;
  std::size_t excluded = 0;  ///< cells with zero truth norm
};

/// Domain mean of |F - F^| / |F| over cells with |F| > 0.
RaeResult rae(const ScalarField& truth, const ScalarField& pred);
RaeResult rae(const VectorField& truth, const VectorField& pred);
RaeResult rae(const TensorField& truth, const TensorField& pred);
/// Mean of the per-frame scalar RAE over frames 1..N-1 (frame 0 is input).
RaeResult rae(const TimeSeries& truth, const TimeSeries& pred);

/// Lesion mask and its mirror image across the domain midline.
struct RegionMask {
  Grid grid;
  Mask lesion;
  Mask contralateral;

  /// Throws ConfigError when the lesion overlaps its own mirror image.
  static RegionMask mirrored(const Grid& g, Mask lesion, int axis = 0);
};

double relative_mean(const ScalarField& feature, const RegionMask& regions);
/// Welch t-statistic between lesion and contralateral samples.
double abs_tvalue(const ScalarField& feature, const RegionMask& regions);

/// Mann-Whitney AUC with midranks for ties.
double roc_auc(std::span<const double> score, const Mask& labels);
double roc_auc(const ScalarField& score, const Mask& labels);

/// Cells with a_hat < tau.
Mask segment_threshold(const ScalarField& a_hat, double tau);
/// 2|P & T| / (|P| + |T|); 1 when both are empty.
double dice(const Mask& pred, const Mask& truth);

struct ThresholdChoice {
  double tau = 0.0;
  double dice = 0.0;
};
/// Best Dice over the candidates (default: 0.01, 0.02, ..., 0.99); ties keep
/// the smallest tau.
ThresholdChoice best_threshold(const ScalarField& a_hat, const Mask& truth,
                               std::span<const double> candidates = {});

}  // namespace adpde
