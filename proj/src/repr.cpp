#include "adpde/repr.hpp"

#include <cmath>
#include <string>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"

namespace adpde {
namespace {

int skew_count(int d) { return d * (d - 1) / 2; }

// f1 = sin(t)/t, f2 = (1 - cos t)/t^2 and g_k = f_k'(t)/t, all as
// functions of t^2 so they stay smooth through zero.
struct RodriguesCoeffs {
  double f1, f2, g1, g2;
};

RodriguesCoeffs rodrigues_coeffs(double t2) {
  RodriguesCoeffs r{};
  if (t2 < 0.25) {
    // Alternating series; 9 terms are below 1e-18 at t = 0.5.
    double f1 = 0.0, f2 = 0.0, g1 = 0.0, g2 = 0.0;
    double pw = 1.0;      // t^(2n)
    double fact = 1.0;    // (2n+1)!
    double prev = 1.0;    // t^(2n-2)
    for (int n = 0; n < 10; ++n) {
      const double sgn = (n % 2 == 0) ? 1.0 : -1.0;
      if (n > 0) fact *= (2.0 * n) * (2.0 * n + 1.0);
      f1 += sgn * pw / fact;
      f2 += sgn * pw / (fact * (2.0 * n + 2.0));
      if (n > 0) {
        g1 += sgn * 2.0 * n * prev / fact;
        g2 += sgn * 2.0 * n * prev / (fact * (2.0 * n + 2.0));
        prev *= t2;
      }
      pw *= t2;
    }
    r = {f1, f2, g1, g2};
    return r;
  }
  const double t = std::sqrt(t2);
  const double s = std::sin(t);
  const double c = std::cos(t);
  const double sh = std::sin(0.5 * t);
  const double one_minus_c = 2.0 * sh * sh;
  r.f1 = s / t;
  r.f2 = one_minus_c / t2;
  r.g1 = (t * c - s) / (t2 * t);
  r.g2 = (t * s - 2.0 * one_minus_c) / (t2 * t2);
  return r;
}

Mat skew3(std::span<const double> b) {
  Mat s(3);
  s(0, 1) = b[0];
  s(0, 2) = b[1];
  s(1, 2) = b[2];
  s(1, 0) = -b[0];
  s(2, 0) = -b[1];
  s(2, 1) = -b[2];
  return s;
}

Mat skew_unit(int k) {
  static constexpr int rows[3] = {0, 0, 1};
  static constexpr int cols[3] = {1, 2, 2};
  Mat e(3);
  e(rows[k], cols[k]) = 1.0;
  e(cols[k], rows[k]) = -1.0;
  return e;
}

double inner(const Mat& x, const Mat& y) {
  double s = 0.0;
  for (int i = 0; i < 9; ++i) s += x.a[i] * y.a[i];
  return s;
}

void check_field(const ScalarField& f, const Grid& g, const char* what) {
  if (f.size() != g.size() || !f.grid().same_geometry(g)) {
    throw ConfigError(std::string("params: ") + what + " grid mismatch");
  }
  if (!f.all_finite()) {
    throw ConfigError(std::string("params: ") + what + " not finite");
  }
}

}  // namespace

VelocityPotential VelocityPotential::zeros(const Grid& g) {
  VelocityPotential p;
  p.components.assign(stencil::potential_components(g), ScalarField(g));
  return p;
}

DiffusionSpectralParams DiffusionSpectralParams::zeros(const Grid& g) {
  DiffusionSpectralParams s;
  s.b.assign(skew_count(g.ndim()), ScalarField(g));
  s.lambda.assign(g.ndim(), ScalarField(g));
  return s;
}

AnomalyField AnomalyField::checked(ScalarField a) {
  for (double x : a.values()) {
    if (!(x > 0.0 && x <= 1.0)) {
      throw ConfigError("anomaly: values must lie in (0, 1]");
    }
  }
  return {std::move(a)};
}

TransportParams TransportParams::neutral(const Grid& g) {
  return {VelocityPotential::zeros(g), DiffusionSpectralParams::zeros(g),
          AnomalyField::normal(g), ScalarField(g)};
}

void TransportParams::validate() const {
  const Grid& g = grid();
  const int d = g.ndim();
  if (d != 2 && d != 3) throw ConfigError("params: grid must be 2D or 3D");
  if (static_cast<int>(potential.components.size()) !=
      stencil::potential_components(g)) {
    throw ConfigError("params: potential component count does not match ndim");
  }
  for (const auto& p : potential.components) check_field(p, g, "psi");
  if (static_cast<int>(spectral.b.size()) != skew_count(d)) {
    throw ConfigError("params: b needs d(d-1)/2 components");
  }
  for (const auto& b : spectral.b) check_field(b, g, "b");
  if (static_cast<int>(spectral.lambda.size()) != d) {
    throw ConfigError("params: lambda needs d components");
  }
  for (const auto& l : spectral.lambda) {
    check_field(l, g, "lambda");
    for (double x : l.values()) {
      if (x < 0.0) throw ConfigError("params: lambda must be non-negative");
    }
  }
  check_field(anomaly.a, g, "a");
  AnomalyField::checked(anomaly.a);
  check_field(sigma, g, "sigma");
  for (double x : sigma.values()) {
    if (x < 0.0) throw ConfigError("params: sigma must be non-negative");
  }
}

VelocityPair build_velocity(const TransportParams& params) {
  const Grid& g = params.grid();
  const std::size_t n = g.size();
  const int alpha = stencil::potential_components(g);
  const int d = g.ndim();
  std::vector<double> psi(alpha * n), apsi(alpha * n);
  for (int c = 0; c < alpha; ++c) {
    const auto& comp = params.potential.components[c];
    for (std::size_t i = 0; i < n; ++i) {
      psi[c * n + i] = comp[i];
      apsi[c * n + i] = params.anomaly.a[i] * comp[i];
    }
  }
  std::vector<double> vb(d * n), v(d * n);
  stencil::curl_flat(g, psi, vb);
  stencil::curl_flat(g, apsi, v);
  VelocityPair out{VectorField(g), VectorField(g)};
  for (int c = 0; c < d; ++c) {
    std::copy_n(vb.begin() + c * n, n, out.v_bar[c].data().begin());
    std::copy_n(v.begin() + c * n, n, out.v[c].data().begin());
  }
  return out;
}

Mat matrix_exp_skew(std::span<const double> b, int d) {
  if (d == 2) {
    // exp([[0, b], [-b, 0]])
    Mat u(2);
    const double c = std::cos(b[0]);
    const double s = std::sin(b[0]);
    u(0, 0) = c;
    u(0, 1) = s;
    u(1, 0) = -s;
    u(1, 1) = c;
    return u;
  }
  if (d != 3) throw ConfigError("matrix_exp_skew: d must be 2 or 3");
  const Mat s = skew3(b);
  const auto k = rodrigues_coeffs(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  return Mat::identity(3) + k.f1 * s + k.f2 * (s * s);
}

std::array<double, 3> matrix_exp_skew_vjp(std::span<const double> b, int d,
                                          const Mat& grad_u) {
  std::array<double, 3> gb{0.0, 0.0, 0.0};
  if (d == 2) {
    const double c = std::cos(b[0]);
    const double s = std::sin(b[0]);
    gb[0] = -s * grad_u(0, 0) + c * grad_u(0, 1) - c * grad_u(1, 0) -
            s * grad_u(1, 1);
    return gb;
  }
  const Mat s = skew3(b);
  const Mat s2 = s * s;
  const auto k = rodrigues_coeffs(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  const double gs = inner(grad_u, s);
  const double gs2 = inner(grad_u, s2);
  for (int j = 0; j < 3; ++j) {
    const Mat e = skew_unit(j);
    gb[j] = b[j] * (k.g1 * gs + k.g2 * gs2) + k.f1 * inner(grad_u, e) +
            k.f2 * inner(grad_u, e * s + s * e);
  }
  return gb;
}

DiffusionBuild build_diffusion(const TransportParams& params) {
  const Grid& g = params.grid();
  const int d = g.ndim();
  const int nb = skew_count(d);
  const std::size_t n = g.size();
  DiffusionBuild out{TensorField(g), TensorField(g), std::vector<Mat>(n),
                     std::vector<std::array<double, 3>>(n)};
  std::array<double, 3> bc{};
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < nb; ++k) bc[k] = params.spectral.b[k][i];
    const Mat u = matrix_exp_skew(std::span<const double>(bc.data(), nb), d);
    std::array<double, 3> lam{0.0, 0.0, 0.0};
    for (int m = 0; m < d; ++m) lam[m] = params.spectral.lambda[m][i];
    const double a = params.anomaly.a[i];
    for (int r = 0; r < d; ++r) {
      for (int c = r; c < d; ++c) {
        double s = 0.0;
        for (int m = 0; m < d; ++m) s += u(r, m) * lam[m] * u(c, m);
        out.d_bar.set(i, r, c, s);
        out.d.set(i, r, c, a * s);
      }
    }
    out.u[i] = u;
    out.lam[i] = lam;
  }
  return out;
}

FeatureMaps feature_maps(const VectorField& v, const TensorField& d) {
  const Grid& g = v.grid();
  require_same_grid(g, d.grid(), "feature_maps");
  const int dim = g.ndim();
  const std::size_t n = g.size();
  FeatureMaps out{ScalarField(g), ScalarField(g), ScalarField(g)};
  const double scale = std::sqrt(dim / (dim - 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    double vv = 0.0;
    for (int c = 0; c < dim; ++c) vv += v[c][i] * v[c][i];
    out.vmag[i] = std::sqrt(vv);
    double tr = 0.0;
    for (int c = 0; c < dim; ++c) tr += d(i, c, c);
    out.trace[i] = tr;
    const double mean = tr / dim;
    double full = 0.0, dev = 0.0;
    for (int r = 0; r < dim; ++r) {
      for (int c = 0; c < dim; ++c) {
        const double x = d(i, r, c);
        const double y = x - (r == c ? mean : 0.0);
        full += x * x;
        dev += y * y;
      }
    }
    out.fa[i] = full > 0.0 ? scale * std::sqrt(dev / full) : 0.0;
  }
  return out;
}

DerivedFields derive(const TransportParams& params) {
  auto vel = build_velocity(params);
  auto dif = build_diffusion(params);
  return {std::move(vel.v_bar), std::move(vel.v),   std::move(dif.d_bar),
          std::move(dif.d),     std::move(dif.u),   std::move(dif.lam),
          params.anomaly.a};
}

}  // namespace adpde
