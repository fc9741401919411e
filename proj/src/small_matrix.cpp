#include "adpde/small_matrix.hpp"

#include <algorithm>
#include <numbers>

namespace adpde {

std::array<double, 3> symmetric_eigenvalues(const Mat& m) {
  std::array<double, 3> ev{0.0, 0.0, 0.0};
  if (m.d == 1) {
    ev[0] = m(0, 0);
    return ev;
  }
  if (m.d == 2) {
    const double mean = 0.5 * (m(0, 0) + m(1, 1));
    const double half = 0.5 * (m(0, 0) - m(1, 1));
    const double r = std::hypot(half, m(0, 1));
    ev[0] = mean - r;
    ev[1] = mean + r;
    return ev;
  }
  const double p1 = m(0, 1) * m(0, 1) + m(0, 2) * m(0, 2) + m(1, 2) * m(1, 2);
  if (p1 == 0.0) {
    ev = {m(0, 0), m(1, 1), m(2, 2)};
    std::sort(ev.begin(), ev.end());
    return ev;
  }
  const double q = m.trace() / 3.0;
  const double p2 = (m(0, 0) - q) * (m(0, 0) - q) + (m(1, 1) - q) * (m(1, 1) - q) +
                    (m(2, 2) - q) * (m(2, 2) - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Mat b = (1.0 / p) * (m - q * Mat::identity(3));
  const double r = std::clamp(b.det() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double hi = q + 2.0 * p * std::cos(phi);
  const double lo = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  ev = {lo, 3.0 * q - hi - lo, hi};
  return ev;
}

}  // namespace adpde
