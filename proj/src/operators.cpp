#include "adpde/operators.hpp"

#include <algorithm>
#include <vector>

#include "adpde/error.hpp"

namespace adpde {
namespace stencil {
namespace {

// Calls fn(j, w) for every tap of row i of the 1D derivative matrix.
template <typename Fn>
inline void for_each_tap(Kind kind, std::size_t i, std::size_t n, double c,
                         Fn&& fn) {
  const std::size_t last = n - 1;
  switch (kind) {
    case Kind::OneSided:
      if (i == 0) {
        fn(0, -3.0 * c);
        fn(1, 4.0 * c);
        fn(2, -c);
      } else if (i == last) {
        fn(last, 3.0 * c);
        fn(last - 1, -4.0 * c);
        fn(last - 2, c);
      } else {
        fn(i + 1, c);
        fn(i - 1, -c);
      }
      break;
    case Kind::ReflectedGrad:
      if (i != 0 && i != last) {
        fn(i + 1, c);
        fn(i - 1, -c);
      }
      break;
    case Kind::ZeroFluxDiv:
      if (i + 1 < last) fn(i + 1, c);
      if (i >= 2) fn(i - 1, -c);
      break;
  }
}

template <typename LineFn>
inline void for_each_line(const Grid& g, int axis, LineFn&& fn) {
  const std::size_t st = g.stride(axis);
  const std::size_t n = g.shape(axis);
  const std::size_t block = n * st;
  const std::size_t nouter = g.size() / block;
  for (std::size_t outer = 0; outer < nouter; ++outer) {
    for (std::size_t inner = 0; inner < st; ++inner) {
      fn(outer * block + inner, st, n);
    }
  }
}

}  // namespace

void axis_diff(const Grid& g, int axis, Kind kind, std::span<const double> f,
               std::span<double> out, bool accumulate) {
  const double c = 0.5 / g.spacing(axis);
  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  for_each_line(g, axis, [&](std::size_t base, std::size_t st, std::size_t n) {
    const double* fl = f.data() + base;
    double* ol = out.data() + base;
    // Interior rows are the hot path; keep them free of the tap dispatch.
    if (kind != Kind::ZeroFluxDiv) {
      for (std::size_t i = 1; i + 1 < n; ++i) {
        ol[i * st] += c * (fl[(i + 1) * st] - fl[(i - 1) * st]);
      }
      for (std::size_t i : {std::size_t{0}, n - 1}) {
        double acc = 0.0;
        for_each_tap(kind, i, n, c, [&](std::size_t j, double w) {
          acc += w * fl[j * st];
        });
        ol[i * st] += acc;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for_each_tap(kind, i, n, c, [&](std::size_t j, double w) {
          acc += w * fl[j * st];
        });
        ol[i * st] += acc;
      }
    }
  });
}

void axis_diff_transpose(const Grid& g, int axis, Kind kind,
                         std::span<const double> w, std::span<double> out,
                         bool accumulate) {
  const double c = 0.5 / g.spacing(axis);
  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  for_each_line(g, axis, [&](std::size_t base, std::size_t st, std::size_t n) {
    const double* wl = w.data() + base;
    double* ol = out.data() + base;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = wl[i * st];
      if (wi == 0.0) continue;
      for_each_tap(kind, i, n, c, [&](std::size_t j, double tap) {
        ol[j * st] += tap * wi;
      });
    }
  });
}

int potential_components(const Grid& g) {
  if (g.ndim() == 2) return 1;
  if (g.ndim() == 3) return 3;
  throw ConfigError("curl: only defined on 2D and 3D grids");
}

void curl_flat(const Grid& g, std::span<const double> potential,
               std::span<double> out) {
  const std::size_t n = g.size();
  const auto blk = [n](auto s, int c) { return s.subspan(c * n, n); };
  if (g.ndim() == 2) {
    auto v0 = blk(out, 0);
    auto v1 = blk(out, 1);
    axis_diff(g, 1, Kind::OneSided, potential, v0);
    axis_diff(g, 0, Kind::OneSided, potential, v1);
    for (double& x : v1) x = -x;
    return;
  }
  potential_components(g);
  std::vector<double> tmp(n);
  // v_i = d_j P_k - d_k P_j for cyclic (i, j, k).
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3;
    const int k = (i + 2) % 3;
    auto vi = blk(out, i);
    axis_diff(g, j, Kind::OneSided, blk(potential, k), vi);
    axis_diff(g, k, Kind::OneSided, blk(potential, j), tmp);
    for (std::size_t c = 0; c < n; ++c) vi[c] -= tmp[c];
  }
}

void curl_transpose_flat(const Grid& g, std::span<const double> w,
                         std::span<double> out) {
  const std::size_t n = g.size();
  const auto blk = [n](auto s, int c) { return s.subspan(c * n, n); };
  std::vector<double> tmp(n);
  if (g.ndim() == 2) {
    auto p = blk(out, 0);
    axis_diff_transpose(g, 1, Kind::OneSided, blk(w, 0), p, true);
    axis_diff_transpose(g, 0, Kind::OneSided, blk(w, 1), tmp);
    for (std::size_t c = 0; c < n; ++c) p[c] -= tmp[c];
    return;
  }
  potential_components(g);
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3;
    const int k = (i + 2) % 3;
    // v_i depends on +d_j P_k and -d_k P_j.
    axis_diff_transpose(g, j, Kind::OneSided, blk(w, i), blk(out, k), true);
    axis_diff_transpose(g, k, Kind::OneSided, blk(w, i), tmp);
    auto pj = blk(out, j);
    for (std::size_t c = 0; c < n; ++c) pj[c] -= tmp[c];
  }
}

}  // namespace stencil

VectorField gradient(const ScalarField& f) {
  const Grid& g = f.grid();
  VectorField out(g);
  for (int k = 0; k < g.ndim(); ++k) {
    stencil::axis_diff(g, k, stencil::Kind::OneSided, f.values(),
                       out[k].values());
  }
  return out;
}

ScalarField divergence(const VectorField& F) {
  const Grid& g = F.grid();
  ScalarField out(g);
  for (int k = 0; k < g.ndim(); ++k) {
    stencil::axis_diff(g, k, stencil::Kind::OneSided, F[k].values(),
                       out.values(), true);
  }
  return out;
}

VectorField curl(const ScalarField& P) {
  const Grid& g = P.grid();
  if (g.ndim() != 2) {
    throw ConfigError("curl: scalar potential requires a 2D grid");
  }
  std::vector<double> flat(2 * g.size());
  stencil::curl_flat(g, P.values(), flat);
  VectorField out(g);
  for (int c = 0; c < 2; ++c) {
    std::copy_n(flat.begin() + c * g.size(), g.size(), out[c].data().begin());
  }
  return out;
}

VectorField curl(const VectorField& P) {
  const Grid& g = P.grid();
  if (g.ndim() != 3 || P.ncomp() != 3) {
    throw ConfigError("curl: vector potential requires a 3D grid");
  }
  const std::size_t n = g.size();
  std::vector<double> pot(3 * n), flat(3 * n);
  for (int c = 0; c < 3; ++c) {
    std::copy(P[c].data().begin(), P[c].data().end(), pot.begin() + c * n);
  }
  stencil::curl_flat(g, pot, flat);
  VectorField out(g);
  for (int c = 0; c < 3; ++c) {
    std::copy_n(flat.begin() + c * n, n, out[c].data().begin());
  }
  return out;
}

ScalarField laplacian_tensor(const ScalarField& C, const TensorField& D) {
  const Grid& g = C.grid();
  require_same_grid(g, D.grid(), "laplacian_tensor");
  const int d = g.ndim();
  const std::size_t n = g.size();
  const bool neumann = g.boundary() == Boundary::NeumannZeroFlux;
  const auto grad_kind =
      neumann ? stencil::Kind::ReflectedGrad : stencil::Kind::OneSided;
  const auto div_kind =
      neumann ? stencil::Kind::ZeroFluxDiv : stencil::Kind::OneSided;

  std::vector<std::vector<double>> grad(d, std::vector<double>(n));
  for (int k = 0; k < d; ++k) {
    stencil::axis_diff(g, k, grad_kind, C.values(), grad[k]);
  }
  ScalarField out(g);
  std::vector<double> flux(n);
  for (int k = 0; k < d; ++k) {
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += D(c, k, j) * grad[j][c];
      flux[c] = s;
    }
    stencil::axis_diff(g, k, div_kind, flux, out.values(), true);
  }
  return out;
}

}  // namespace adpde
