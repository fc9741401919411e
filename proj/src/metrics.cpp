#include "adpde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adpde/error.hpp"

namespace adpde {
namespace {

template <typename NormFn>
RaeResult rae_cells(std::size_t n, NormFn&& norms) {
  RaeResult r;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [err, ref] = norms(i);
    if (ref == 0.0) {
      ++r.excluded;
      continue;
    }
    sum += err / ref;
    ++used;
  }
  if (used == 0) throw ConfigError("rae: every cell has zero truth norm");
  r.value = sum / static_cast<double>(used);
  return r;
}

struct RegionStats {
  double mean = 0.0, var = 0.0;
  std::size_t n = 0;
};

RegionStats stats(const ScalarField& f, const Mask& m) {
  RegionStats s;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (m[i]) {
      s.mean += f[i];
      ++s.n;
    }
  }
  if (s.n == 0) return s;
  s.mean /= static_cast<double>(s.n);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (m[i]) s.var += (f[i] - s.mean) * (f[i] - s.mean);
  }
  s.var = s.n > 1 ? s.var / static_cast<double>(s.n - 1) : 0.0;
  return s;
}

void check_regions(const ScalarField& f, const RegionMask& r) {
  require_same_grid(f.grid(), r.grid, "region metric");
  if (r.lesion.size() != f.size() || r.contralateral.size() != f.size()) {
    throw ConfigError("region metric: mask size mismatch");
  }
}

}  // namespace

RaeResult rae(const ScalarField& truth, const ScalarField& pred) {
  require_same_grid(truth.grid(), pred.grid(), "rae");
  return rae_cells(truth.size(), [&](std::size_t i) {
    return std::pair{std::abs(truth[i] - pred[i]), std::abs(truth[i])};
  });
}

RaeResult rae(const VectorField& truth, const VectorField& pred) {
  require_same_grid(truth.grid(), pred.grid(), "rae");
  return rae_cells(truth.grid().size(), [&](std::size_t i) {
    double e = 0.0, r = 0.0;
    for (int c = 0; c < truth.ncomp(); ++c) {
      e += (truth[c][i] - pred[c][i]) * (truth[c][i] - pred[c][i]);
      r += truth[c][i] * truth[c][i];
    }
    return std::pair{std::sqrt(e), std::sqrt(r)};
  });
}

RaeResult rae(const TensorField& truth, const TensorField& pred) {
  require_same_grid(truth.grid(), pred.grid(), "rae");
  const int d = truth.dim();
  return rae_cells(truth.grid().size(), [&](std::size_t i) {
    double e = 0.0, r = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        const double t = truth(i, a, b);
        const double p = pred(i, a, b);
        e += (t - p) * (t - p);
        r += t * t;
      }
    return std::pair{std::sqrt(e), std::sqrt(r)};
  });
}

RaeResult rae(const TimeSeries& truth, const TimeSeries& pred) {
  if (truth.size() != pred.size() || truth.size() < 2) {
    throw ConfigError("rae: series frame counts differ or are too short");
  }
  RaeResult out;
  for (std::size_t f = 1; f < truth.size(); ++f) {
    const auto r = rae(truth.frames[f], pred.frames[f]);
    out.value += r.value;
    out.excluded += r.excluded;
  }
  out.value /= static_cast<double>(truth.size() - 1);
  return out;
}

RegionMask RegionMask::mirrored(const Grid& g, Mask lesion, int axis) {
  if (lesion.size() != g.size()) throw ConfigError("region mask: size mismatch");
  if (axis < 0 || axis >= g.ndim()) throw ConfigError("region mask: bad mirror axis");
  RegionMask r{g, std::move(lesion), Mask(g.size(), 0)};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!r.lesion[i]) continue;
    auto idx = g.unravel(i);
    idx[axis] = g.shape(axis) - 1 - idx[axis];
    r.contralateral[g.ravel(idx)] = 1;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (r.lesion[i] && r.contralateral[i]) {
      throw ConfigError("region mask: lesion overlaps its contralateral mirror");
    }
  }
  return r;
}

double relative_mean(const ScalarField& feature, const RegionMask& regions) {
  check_regions(feature, regions);
  const auto a = stats(feature, regions.lesion);
  const auto b = stats(feature, regions.contralateral);
  if (a.n == 0 || b.n == 0) throw ConfigError("relative_mean: empty region");
  if (!(a.mean > 0.0) || !(b.mean > 0.0)) {
    throw NumericalError("relative_mean: non-positive region mean");
  }
  return std::min(a.mean / b.mean, b.mean / a.mean);
}

double abs_tvalue(const ScalarField& feature, const RegionMask& regions) {
  check_regions(feature, regions);
  const auto a = stats(feature, regions.lesion);
  const auto b = stats(feature, regions.contralateral);
  if (a.n < 2 || b.n < 2) throw ConfigError("abs_tvalue: each region needs 2 cells");
  const double se2 = a.var / static_cast<double>(a.n) + b.var / static_cast<double>(b.n);
  if (!(se2 > 0.0)) throw NumericalError("abs_tvalue: zero variance in both regions");
  return std::abs(a.mean - b.mean) / std::sqrt(se2);
}

double roc_auc(std::span<const double> score, const Mask& labels) {
  const std::size_t n = score.size();
  if (labels.size() != n) throw ConfigError("roc_auc: size mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  // Twice the midrank keeps the sum exact in integers.
  std::uint64_t pos = 0, neg = 0, rank2_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score[order[j]] == score[order[i]]) ++j;
    const std::uint64_t rank2 = static_cast<std::uint64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank2_sum += rank2;
    }
    i = j;
  }
  for (auto l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ConfigError("roc_auc: labels contain a single class");
  // U = R - pos (pos + 1) / 2, all doubled.
  const std::uint64_t u2 = rank2_sum - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double roc_auc(const ScalarField& score, const Mask& labels) {
  return roc_auc(score.values(), labels);
}

Mask segment_threshold(const ScalarField& a_hat, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("segment_threshold: tau must lie in (0, 1)");
  Mask m(a_hat.size(), 0);
  for (std::size_t i = 0; i < a_hat.size(); ++i) m[i] = a_hat[i] < tau ? 1 : 0;
  return m;
}

double dice(const Mask& pred, const Mask& truth) {
  if (pred.size() != truth.size()) throw ConfigError("dice: size mismatch");
  std::size_t inter = 0, np = 0, nt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] != 0;
    nt += truth[i] != 0;
    inter += (pred[i] != 0) && (truth[i] != 0);
  }
  if (np + nt == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

ThresholdChoice best_threshold(const ScalarField& a_hat, const Mask& truth,
                               std::span<const double> candidates) {
  std::vector<double> grid;
  if (candidates.empty()) {
    for (int k = 1; k < 100; ++k) grid.push_back(k / 100.0);
    candidates = grid;
  }
  ThresholdChoice best{candidates.front(), -1.0};
  for (double tau : candidates) {
    const double d = dice(segment_threshold(a_hat, tau), truth);
    if (d > best.dice) best = {tau, d};
  }
  return best;
}

}  // namespace adpde
