#include <cmath>
#include <random>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace adpde;
using namespace testing_support;

namespace {

ScalarField from_fn(const Grid& g, auto fn) {
  ScalarField f(g);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.unravel(c);
    const double x = g.coord(0, idx[0]);
    const double y = g.ndim() > 1 ? g.coord(1, idx[1]) : 0.0;
    const double z = g.ndim() > 2 ? g.coord(2, idx[2]) : 0.0;
    f[c] = fn(x, y, z);
  }
  return f;
}

bool deep_interior(const Grid& g, std::size_t c, std::size_t layer) {
  const auto idx = g.unravel(c);
  for (int k = 0; k < g.ndim(); ++k) {
    if (idx[k] < layer || idx[k] + layer >= g.shape(k)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("grid rejects degenerate shapes and spacings") {
  CHECK_THROWS_AS(Grid::make2d(2, 5), ConfigError);
  CHECK_THROWS_AS(Grid::make2d(5, 5, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(Grid::make2d(5, 5, -1.0, 1.0), ConfigError);
  const Grid g = Grid::make3d(3, 4, 5, 0.5);
  CHECK(g.size() == 60);
  CHECK(g.stride(2) == 1);
  CHECK(g.stride(0) == 20);
  for (std::size_t c = 0; c < g.size(); ++c) CHECK(g.ravel(g.unravel(c)) == c);
}

TEST_CASE("fields enforce size and finiteness") {
  const Grid g = Grid::make2d(3, 3);
  CHECK_THROWS_AS(ScalarField(g, std::vector<double>(8, 0.0)), ConfigError);
  std::vector<double> bad(9, 0.0);
  bad[4] = std::nan("");
  CHECK_THROWS_AS(ScalarField(g, bad), ConfigError);
  CHECK_THROWS_AS(VectorField(std::vector<ScalarField>{ScalarField(g)}), ConfigError);
}

TEST_CASE("tensor storage is symmetric by construction") {
  const Grid g = Grid::make3d(3, 3, 3);
  TensorField t(g);
  CHECK(t.nentries() == 6);
  t.set(5, 2, 0, 1.5);
  CHECK(t(5, 0, 2) == 1.5);
  CHECK(TensorField::entry_index(3, 1, 1) == 3);
  CHECK(TensorField::entry_index(3, 2, 2) == 5);
  CHECK(TensorField::entry_index(2, 1, 0) == 1);
}

TEST_CASE("gradient of a constant is zero") {
  const Grid g = Grid::make2d(5, 5);
  const VectorField gr = gradient(ScalarField(g, 3.25));
  for (int k = 0; k < 2; ++k) CHECK(gr[k].max_abs() == 0.0);
}

TEST_CASE("gradient of x is (1, 0) including boundary rows") {
  const Grid g = Grid::make2d(6, 5);
  const VectorField gr = gradient(from_fn(g, [](double x, double, double) { return x; }));
  for (std::size_t c = 0; c < g.size(); ++c) {
    CHECK(gr[0][c] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(gr[1][c] == 0.0);
  }
}

TEST_CASE("gradient of x^2 + y^2 is exact for the quadratic") {
  const Grid g = Grid::make2d(9, 9, 0.5, 0.5);
  const VectorField gr =
      gradient(from_fn(g, [](double x, double y, double) { return x * x + y * y; }));
  double err = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.unravel(c);
    err = std::max(err, std::abs(gr[0][c] - 2.0 * g.coord(0, idx[0])));
    err = std::max(err, std::abs(gr[1][c] - 2.0 * g.coord(1, idx[1])));
  }
  CHECK(err < 1e-12);
}

TEST_CASE("divergence of linear fields") {
  const Grid g = Grid::make2d(7, 7);
  VectorField f(g);
  f[0] = from_fn(g, [](double x, double, double) { return x; });
  f[1] = from_fn(g, [](double, double y, double) { return -y; });
  CHECK(divergence(f).max_abs() < 1e-13);
  f[1] = from_fn(g, [](double, double y, double) { return y; });
  const ScalarField d = divergence(f);
  for (std::size_t c = 0; c < g.size(); ++c) CHECK(d[c] == doctest::Approx(2.0));
}

TEST_CASE("divergence equals the sum of per-component axis derivatives") {
  std::mt19937_64 rng(11);
  const Grid g = Grid::make2d(7, 7);
  const VectorField f = random_vector(g, rng);
  const ScalarField d = divergence(f);
  const VectorField g0 = gradient(f[0]);
  const VectorField g1 = gradient(f[1]);
  for (std::size_t c = 0; c < g.size(); ++c) {
    CHECK(std::abs(d[c] - (g0[0][c] + g1[1][c])) < 1e-14);
  }
}

TEST_CASE("curl of a constant potential is zero") {
  const Grid g = Grid::make2d(5, 6);
  const VectorField v = curl(ScalarField(g, 2.0));
  CHECK(v[0].max_abs() == 0.0);
  CHECK(v[1].max_abs() == 0.0);
}

TEST_CASE("curl of xy is (x, -y)") {
  const Grid g = Grid::make2d(6, 6);
  const VectorField v = curl(from_fn(g, [](double x, double y, double) { return x * y; }));
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.interior(c)) continue;
    const auto idx = g.unravel(c);
    CHECK(v[0][c] == doctest::Approx(static_cast<double>(idx[0])));
    CHECK(v[1][c] == doctest::Approx(-static_cast<double>(idx[1])));
  }
}

TEST_CASE("curl rejects a potential of the wrong dimensionality") {
  CHECK_THROWS_AS(curl(ScalarField(Grid::make3d(3, 3, 3))), ConfigError);
  CHECK_THROWS_AS(curl(VectorField(Grid::make2d(3, 3))), ConfigError);
}

TEST_CASE("divergence of curl vanishes in the interior") {
  std::mt19937_64 rng(3);
  const Grid g2 = Grid::make2d(8, 8);
  const ScalarField d2 = divergence(curl(random_scalar(g2, rng, -10, 10)));
  for (std::size_t c = 0; c < g2.size(); ++c) {
    if (g2.interior(c)) CHECK(std::abs(d2[c]) <= 1e-12);
  }
  const Grid g3 = Grid::make3d(6, 7, 5, 0.7);
  const ScalarField d3 = divergence(curl(random_vector(g3, rng)));
  for (std::size_t c = 0; c < g3.size(); ++c) {
    if (g3.interior(c)) CHECK(std::abs(d3[c]) <= 1e-12);
  }
}

TEST_CASE("operators are linear") {
  std::mt19937_64 rng(5);
  const Grid g = Grid::make2d(7, 9, 0.5, 1.5);
  const ScalarField f = random_scalar(g, rng);
  const ScalarField h = random_scalar(g, rng);
  const double a = 1.7, b = -0.3;
  ScalarField comb(g);
  for (std::size_t c = 0; c < g.size(); ++c) comb[c] = a * f[c] + b * h[c];
  const VectorField gf = gradient(f), gh = gradient(h), gc = gradient(comb);
  const VectorField cf = curl(f), ch = curl(h), cc = curl(comb);
  for (int k = 0; k < 2; ++k)
    for (std::size_t c = 0; c < g.size(); ++c) {
      CHECK(std::abs(gc[k][c] - (a * gf[k][c] + b * gh[k][c])) < 1e-12);
      CHECK(std::abs(cc[k][c] - (a * cf[k][c] + b * ch[k][c])) < 1e-12);
    }
  const ScalarField df = divergence(cf), dc = divergence(gc), dg = divergence(gf),
                    dh = divergence(gh);
  for (std::size_t c = 0; c < g.size(); ++c) {
    CHECK(std::abs(dc[c] - (a * dg[c] + b * dh[c])) < 1e-11);
  }
  (void)df;
}

TEST_CASE("quadratic polynomials are reproduced exactly in 3D") {
  const Grid g = Grid::make3d(5, 6, 7, 0.5);
  const auto p = [](double x, double y, double z) {
    return 1.0 + 2.0 * x - y + 0.5 * z + x * y - 2.0 * z * z + y * z;
  };
  const VectorField gr = gradient(from_fn(g, p));
  double err = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.unravel(c);
    const double x = g.coord(0, idx[0]), y = g.coord(1, idx[1]), z = g.coord(2, idx[2]);
    err = std::max(err, std::abs(gr[0][c] - (2.0 + y)));
    err = std::max(err, std::abs(gr[1][c] - (-1.0 + x + z)));
    err = std::max(err, std::abs(gr[2][c] - (0.5 - 4.0 * z + y)));
  }
  CHECK(err < 1e-12);
}

TEST_CASE("laplacian with a zero tensor is zero") {
  std::mt19937_64 rng(1);
  const Grid g = Grid::make2d(6, 6);
  CHECK(laplacian_tensor(random_scalar(g, rng), TensorField(g)).max_abs() == 0.0);
}

TEST_CASE("laplacian of x^2 + y^2 with identity tensor is 4") {
  for (Boundary b : {Boundary::CauchyPatch, Boundary::NeumannZeroFlux}) {
    const Grid g = Grid::make2d(9, 9, 1.0, 1.0, b);
    TensorField d(g);
    for (std::size_t c = 0; c < g.size(); ++c) {
      d.set(c, 0, 0, 1.0);
      d.set(c, 1, 1, 1.0);
    }
    const ScalarField lap =
        laplacian_tensor(from_fn(g, [](double x, double y, double) { return x * x + y * y; }), d);
    // The zero-flux closure alters the layer next to the faces.
    const std::size_t layer = b == Boundary::CauchyPatch ? 1 : 2;
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (deep_interior(g, c, layer)) CHECK(lap[c] == doctest::Approx(4.0).epsilon(1e-13));
    }
  }
}

TEST_CASE("laplacian on patch grids chains gradient, matvec and divergence") {
  std::mt19937_64 rng(8);
  const Grid g = Grid::make2d(6, 6, 1.0, 1.0, Boundary::CauchyPatch);
  const ScalarField c = random_scalar(g, rng);
  const TensorField d = random_psd(g, rng);
  const VectorField gr = gradient(c);
  VectorField flux(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int r = 0; r < 2; ++r) flux[r][i] = d(i, r, 0) * gr[0][i] + d(i, r, 1) * gr[1][i];
  const ScalarField ref = divergence(flux);
  const ScalarField lap = laplacian_tensor(c, d);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(lap[i] - ref[i]) < 1e-13);
}

TEST_CASE("zero-flux laplacian is symmetric, non-positive and conserves mass") {
  std::mt19937_64 rng(21);
  const Grid g = Grid::make2d(6, 7, 0.8, 1.1);
  const TensorField d = random_psd(g, rng);
  const ScalarField x = random_scalar(g, rng);
  const ScalarField y = random_scalar(g, rng);
  const ScalarField lx = laplacian_tensor(x, d);
  const ScalarField ly = laplacian_tensor(y, d);
  double xly = 0.0, ylx = 0.0, xlx = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    xly += x[i] * ly[i];
    ylx += y[i] * lx[i];
    xlx += x[i] * lx[i];
    sum += lx[i];
  }
  CHECK(std::abs(xly - ylx) < 1e-12);
  CHECK(xlx <= 1e-12);
  CHECK(std::abs(sum) < 1e-12);
}

TEST_CASE("axis_diff_transpose is the adjoint of axis_diff") {
  std::mt19937_64 rng(4);
  const Grid g = Grid::make3d(4, 5, 6, 0.9);
  for (auto kind : {stencil::Kind::OneSided, stencil::Kind::ReflectedGrad,
                    stencil::Kind::ZeroFluxDiv}) {
    for (int axis = 0; axis < 3; ++axis) {
      const ScalarField f = random_scalar(g, rng);
      const ScalarField w = random_scalar(g, rng);
      std::vector<double> af(g.size()), atw(g.size());
      stencil::axis_diff(g, axis, kind, f.values(), af);
      stencil::axis_diff_transpose(g, axis, kind, w.values(), atw);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        lhs += w[i] * af[i];
        rhs += atw[i] * f[i];
      }
      CHECK(std::abs(lhs - rhs) < 1e-12);
    }
  }
}
