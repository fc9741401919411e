#include "adpde/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"
#include "adpde/parallel.hpp"
#include "adpde/rng.hpp"

namespace adpde {
namespace {

constexpr double kGlobalAnomalyRaw = 3.0;
constexpr double kInitSigma = 1e-3;

double sigmoid(double r) {
  if (r >= 0.0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

int skew_count(int d) { return d * (d - 1) / 2; }

SolverConfig solver_for(const TimeSeries& observed, const FitConfig& cfg) {
  SolverConfig s;
  s.dt = observed.dt;
  s.form = cfg.form;
  s.cfl_safety = cfg.cfl_safety;
  s.stochastic = false;
  return s;
}

struct WindowGrad {
  double loss = 0.0;
  std::vector<double> gv, gd;
};

struct Stages {
  std::vector<double> k, x2, x3, x4, gk, w, gx, acc;
  void resize(std::size_t n) {
    for (auto* v : {&k, &x2, &x3, &x4, &gk, &w, &gx, &acc}) v->assign(n, 0.0);
  }
};

void masked_rhs(const TransportOperator& op, std::span<const std::uint8_t> mask,
                std::span<const double> rate, std::span<const double> x,
                std::span<double> out) {
  op.apply(x, out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = rate.empty() ? 0.0 : rate[i];
  }
}

// Reverse of one rk4_substep started from c: lam holds dLoss/dc_next on
// entry and dLoss/dc on exit; parameter sensitivities accumulate.
void rk4_reverse(const TransportOperator& op, std::span<const std::uint8_t> mask,
                 std::span<const double> rate, std::span<const double> c,
                 double h, std::span<double> lam, std::span<double> gv,
                 std::span<double> gd, Stages& s) {
  const std::size_t n = c.size();
  masked_rhs(op, mask, rate, c, s.k);
  for (std::size_t i = 0; i < n; ++i) s.x2[i] = c[i] + 0.5 * h * s.k[i];
  masked_rhs(op, mask, rate, s.x2, s.k);
  for (std::size_t i = 0; i < n; ++i) s.x3[i] = c[i] + 0.5 * h * s.k[i];
  masked_rhs(op, mask, rate, s.x3, s.k);
  for (std::size_t i = 0; i < n; ++i) s.x4[i] = c[i] + h * s.k[i];

  std::copy(lam.begin(), lam.end(), s.acc.begin());
  // Stage weights of the final combination and of the next stage input.
  const double wb[4] = {h / 6.0, h / 3.0, h / 3.0, h / 6.0};
  const double wn[4] = {0.5 * h, 0.5 * h, h, 0.0};
  const std::span<const double> xs[4] = {c, s.x2, s.x3, s.x4};
  std::fill(s.gx.begin(), s.gx.end(), 0.0);
  for (int st = 3; st >= 0; --st) {
    for (std::size_t i = 0; i < n; ++i) {
      const double gk = wb[st] * lam[i] + wn[st] * s.gx[i];
      s.w[i] = mask[i] ? 0.0 : gk;
    }
    op.apply_transpose(s.w, s.gx);
    op.accumulate_param_grad(s.w, xs[st], gv, gd);
    for (std::size_t i = 0; i < n; ++i) s.acc[i] += s.gx[i];
  }
  std::copy(s.acc.begin(), s.acc.end(), lam.begin());
}

WindowGrad window_pass(const TransportOperator& op,
                       const std::vector<std::uint8_t>& mask,
                       const SubstepPlan& plan, const TimeSeries& obs,
                       std::size_t start, std::size_t n_out, double scale,
                       bool want_grad) {
  const Grid& g = op.grid();
  const std::size_t n = g.size();
  const int d = g.ndim();
  const std::size_t nint = n_out - 1;
  const double dt = obs.dt;
  WindowGrad out;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> rates(nint, std::vector<double>(n, 0.0));
  std::vector<std::vector<double>> resid;
  if (want_grad) {
    states.reserve(nint * plan.count);
    resid.reserve(nint);
  }
  std::vector<double> c(obs.frames[start].values().begin(),
                        obs.frames[start].values().end());
  Rk4Scratch scratch;
  double sq = 0.0;
  for (std::size_t j = 0; j < nint; ++j) {
    const auto& a = obs.frames[start + j];
    const auto& b = obs.frames[start + j + 1];
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) rates[j][i] = (b[i] - a[i]) / dt;
    }
    for (std::size_t s = 0; s < plan.count; ++s) {
      if (want_grad) states.push_back(c);
      rk4_substep(op, mask, rates[j], plan.step, c, scratch);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) c[i] = b[i];
    }
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = c[i] - b[i];
      sq += r[i] * r[i];
    }
    if (!std::isfinite(sq)) {
      throw NumericalError("fit: forward pass produced non-finite state");
    }
    if (want_grad) resid.push_back(std::move(r));
  }
  const double denom = static_cast<double>(n_out) * static_cast<double>(n);
  out.loss = sq / denom;
  if (!want_grad) return out;

  out.gv.assign(d * n, 0.0);
  out.gd.assign(TensorField::entry_count(d) * n, 0.0);
  std::vector<double> lam(n, 0.0);
  Stages st;
  st.resize(n);
  for (std::size_t j = nint; j-- > 0;) {
    const double w = 2.0 * scale / denom;
    for (std::size_t i = 0; i < n; ++i) {
      lam[i] += w * resid[j][i];
      if (mask[i]) lam[i] = 0.0;
    }
    for (std::size_t s = plan.count; s-- > 0;) {
      rk4_reverse(op, mask, rates[j], states[j * plan.count + s], plan.step,
                  lam, out.gv, out.gd, st);
    }
  }
  return out;
}

void check_block(std::span<const double> g, Block b) {
  for (double x : g) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string("gradient: non-finite value in block ") +
                           block_name(b));
    }
  }
}

// Psi of a uniform velocity about the domain centre, and the transpose map
// from dL/dPsi to dL/dv.
std::array<double, 3> domain_center(const Grid& g) {
  std::array<double, 3> c{0.0, 0.0, 0.0};
  for (int k = 0; k < g.ndim(); ++k) {
    c[k] = 0.5 * g.spacing(k) * static_cast<double>(g.shape(k) - 1);
  }
  return c;
}

void linear_potential(const Grid& g, const std::array<double, 3>& v,
                      std::span<double> psi) {
  const std::size_t n = g.size();
  const auto c = domain_center(g);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = g.unravel(i);
    double r[3] = {0.0, 0.0, 0.0};
    for (int k = 0; k < g.ndim(); ++k) r[k] = g.coord(k, idx[k]) - c[k];
    if (g.ndim() == 2) {
      psi[i] = v[0] * r[1] - v[1] * r[0];
    } else {
      psi[i] = 0.5 * (v[1] * r[2] - v[2] * r[1]);
      psi[n + i] = 0.5 * (v[2] * r[0] - v[0] * r[2]);
      psi[2 * n + i] = 0.5 * (v[0] * r[1] - v[1] * r[0]);
    }
  }
}

std::array<double, 3> linear_potential_transpose(const Grid& g,
                                                 std::span<const double> gpsi) {
  const std::size_t n = g.size();
  const auto c = domain_center(g);
  std::array<double, 3> gv{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = g.unravel(i);
    double r[3] = {0.0, 0.0, 0.0};
    for (int k = 0; k < g.ndim(); ++k) r[k] = g.coord(k, idx[k]) - c[k];
    if (g.ndim() == 2) {
      gv[0] += gpsi[i] * r[1];
      gv[1] -= gpsi[i] * r[0];
    } else {
      const double p0 = gpsi[i], p1 = gpsi[n + i], p2 = gpsi[2 * n + i];
      gv[0] += 0.5 * (-p1 * r[2] + p2 * r[1]);
      gv[1] += 0.5 * (p0 * r[2] - p2 * r[0]);
      gv[2] += 0.5 * (-p0 * r[1] + p1 * r[0]);
    }
  }
  return gv;
}

// Spatially uniform model: velocity, packed B, raw Lambda.
struct GlobalParams {
  std::vector<double> x;  // [v (d), b (nb), lambda_raw (d)]
};

RawParams expand_global(const Grid& g, const GlobalParams& gp) {
  const int d = g.ndim();
  const int nb = skew_count(d);
  RawParams raw = RawParams::from_params(TransportParams::neutral(g), g);
  const std::size_t n = g.size();
  std::array<double, 3> v{0.0, 0.0, 0.0};
  for (int k = 0; k < d; ++k) v[k] = gp.x[k];
  linear_potential(g, v, std::span<double>(raw.x.data() + raw.offset(Block::Psi),
                                           raw.count(Block::Psi)));
  for (int k = 0; k < nb; ++k) {
    std::fill_n(raw.x.begin() + raw.offset(Block::B) + k * n, n, gp.x[d + k]);
  }
  for (int m = 0; m < d; ++m) {
    std::fill_n(raw.x.begin() + raw.offset(Block::Lambda) + m * n, n,
                gp.x[d + nb + m]);
  }
  std::fill_n(raw.x.begin() + raw.offset(Block::A), n, kGlobalAnomalyRaw);
  std::fill_n(raw.x.begin() + raw.offset(Block::Sigma), n, inv_softplus(kInitSigma));
  return raw;
}

std::vector<double> reduce_global(const RawParams& raw, std::span<const double> grad) {
  const Grid& g = raw.grid;
  const int d = g.ndim();
  const int nb = skew_count(d);
  const std::size_t n = g.size();
  std::vector<double> out(d + nb + d, 0.0);
  const auto gv = linear_potential_transpose(
      g, grad.subspan(raw.offset(Block::Psi), raw.count(Block::Psi)));
  for (int k = 0; k < d; ++k) out[k] = gv[k];
  for (int k = 0; k < nb; ++k) {
    const double* p = grad.data() + raw.offset(Block::B) + k * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    out[d + k] = s;
  }
  for (int m = 0; m < d; ++m) {
    const double* p = grad.data() + raw.offset(Block::Lambda) + m * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    out[d + nb + m] = s;
  }
  return out;
}

// Centroid drift and covariance growth of the observed mass.
GlobalParams moment_guess(const TimeSeries& obs) {
  const Grid& g = obs.grid;
  const int d = g.ndim();
  const int nb = skew_count(d);
  const std::size_t nf = obs.size();
  std::vector<std::array<double, 3>> mean(nf);
  std::vector<std::array<double, 9>> cov(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    double mass = 0.0;
    std::array<double, 3> m{0, 0, 0};
    std::array<double, 9> s{};
    // Only the bright part of the frame is weighted so that diffuse noise
    // does not dominate the spread.
    const double floor = 0.2 * obs.frames[f].max_abs();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double w = std::max(obs.frames[f][i] - floor, 0.0);
      const auto idx = g.unravel(i);
      double x[3] = {0, 0, 0};
      for (int k = 0; k < d; ++k) x[k] = g.coord(k, idx[k]);
      mass += w;
      for (int k = 0; k < d; ++k) m[k] += w * x[k];
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) s[a * 3 + b] += w * x[a] * x[b];
    }
    if (mass <= 0.0) mass = 1.0;
    for (int k = 0; k < d; ++k) m[k] /= mass;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) s[a * 3 + b] = s[a * 3 + b] / mass - m[a] * m[b];
    mean[f] = m;
    cov[f] = s;
  }
  // Least-squares slopes against t = f dt.
  double tm = 0.0;
  for (std::size_t f = 0; f < nf; ++f) tm += f * obs.dt;
  tm /= nf;
  double stt = 0.0;
  for (std::size_t f = 0; f < nf; ++f) stt += (f * obs.dt - tm) * (f * obs.dt - tm);
  auto slope = [&](auto get) {
    double ym = 0.0;
    for (std::size_t f = 0; f < nf; ++f) ym += get(f);
    ym /= nf;
    double sty = 0.0;
    for (std::size_t f = 0; f < nf; ++f) sty += (f * obs.dt - tm) * (get(f) - ym);
    return sty / stt;
  };
  const double a0 = anomaly_from_raw(kGlobalAnomalyRaw);
  GlobalParams gp;
  gp.x.assign(d + nb + d, 0.0);
  // Caps: one cell per output interval for the drift, one cell squared per
  // interval for the spread.
  double hmin = g.spacing(0);
  for (int k = 1; k < d; ++k) hmin = std::min(hmin, g.spacing(k));
  const double vcap = hmin / obs.dt, lcap = hmin * hmin / obs.dt;
  for (int k = 0; k < d; ++k) {
    gp.x[k] = std::clamp(slope([&](std::size_t f) { return mean[f][k]; }), -vcap, vcap) / a0;
  }
  Mat dm(d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      dm(a, b) = std::clamp(0.5 * slope([&](std::size_t f) { return cov[f][a * 3 + b]; }),
                            -lcap, lcap) / a0;
  constexpr double kMinLambda = 1e-3;
  if (d == 2) {
    const double mean_l = 0.5 * (dm(0, 0) + dm(1, 1));
    const double half = 0.5 * (dm(0, 0) - dm(1, 1));
    const double r = std::hypot(half, dm(0, 1));
    // Eigenvector of the smaller eigenvalue is column 0 of U = (cos b, -sin b).
    const double phi = 0.5 * std::atan2(2.0 * dm(0, 1), dm(0, 0) - dm(1, 1));
    const double ex = -std::sin(phi), ey = std::cos(phi);
    gp.x[d] = std::atan2(-ey, ex);
    gp.x[d + nb] = inv_softplus(std::max(mean_l - r, kMinLambda));
    gp.x[d + nb + 1] = inv_softplus(std::max(mean_l + r, kMinLambda));
  } else {
    const double iso = std::max(dm.trace() / d, kMinLambda);
    for (int m = 0; m < d; ++m) gp.x[d + nb + m] = inv_softplus(iso);
  }
  return gp;
}

struct Adam {
  std::vector<double> m, v;
  std::size_t t = 0;
  void step(std::vector<double>& x, const std::vector<double>& g, double lr,
            const FitConfig& cfg) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
};

double norm2(const std::vector<double>& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

}  // namespace

const char* block_name(Block b) {
  switch (b) {
    case Block::Psi: return "psi";
    case Block::B: return "b";
    case Block::Lambda: return "lambda";
    case Block::A: return "a";
    case Block::Sigma: return "sigma";
  }
  return "?";
}

double softplus(double r) {
  return r > 30.0 ? r : std::log1p(std::exp(r));
}

double inv_softplus(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(std::max(y, 1e-12)));
}

double anomaly_from_raw(double r) {
  return kAnomalyFloor + (1.0 - kAnomalyFloor) * sigmoid(r);
}

double raw_from_anomaly(double a) {
  const double q =
      std::clamp((a - kAnomalyFloor) / (1.0 - kAnomalyFloor), 1e-9, 1.0 - 1e-9);
  return std::log(q / (1.0 - q));
}

void FitConfig::validate(std::size_t n_frames) const {
  if (w_ul < 0.0 || w_ss < 0.0 || w_sigma < 0.0) {
    throw ConfigError("fit: weights must be non-negative");
  }
  if (n_out < 2 || n_out > n_in || n_in > n_frames) {
    throw ConfigError("fit: need 2 <= n_out <= n_in <= frame count");
  }
  if (!(step_size > 0.0) || !(global_step > 0.0)) {
    throw ConfigError("fit: step sizes must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("fit: Adam betas must lie in [0, 1)");
  }
  if (!(cfl_safety > 0.0 && cfl_safety <= 1.0)) {
    throw ConfigError("fit: cfl_safety must lie in (0, 1]");
  }
}

std::size_t RawParams::offset(Block b) const {
  const std::size_t n = grid.size();
  const int d = grid.ndim();
  const std::size_t psi = stencil::potential_components(grid) * n;
  const std::size_t bb = skew_count(d) * n;
  const std::size_t lam = d * n;
  switch (b) {
    case Block::Psi: return 0;
    case Block::B: return psi;
    case Block::Lambda: return psi + bb;
    case Block::A: return psi + bb + lam;
    case Block::Sigma: return psi + bb + lam + n;
  }
  return 0;
}

std::size_t RawParams::count(Block b) const {
  const std::size_t n = grid.size();
  switch (b) {
    case Block::Psi: return stencil::potential_components(grid) * n;
    case Block::B: return skew_count(grid.ndim()) * n;
    case Block::Lambda: return grid.ndim() * n;
    case Block::A:
    case Block::Sigma: return n;
  }
  return 0;
}

RawParams RawParams::from_params(const TransportParams& p, const Grid& grid) {
  p.validate();
  require_same_grid(grid, p.grid(), "raw params");
  RawParams raw;
  raw.grid = grid;
  const std::size_t n = grid.size();
  raw.x.assign(raw.offset(Block::Sigma) + n, 0.0);
  double* x = raw.x.data();
  std::size_t o = 0;
  for (const auto& c : p.potential.components)
    for (std::size_t i = 0; i < n; ++i) x[o++] = c[i];
  for (const auto& c : p.spectral.b)
    for (std::size_t i = 0; i < n; ++i) x[o++] = c[i];
  for (const auto& c : p.spectral.lambda)
    for (std::size_t i = 0; i < n; ++i) x[o++] = inv_softplus(c[i]);
  for (std::size_t i = 0; i < n; ++i) x[o++] = raw_from_anomaly(p.anomaly.a[i]);
  for (std::size_t i = 0; i < n; ++i) x[o++] = inv_softplus(p.sigma[i]);
  return raw;
}

TransportParams RawParams::to_params() const {
  const std::size_t n = grid.size();
  TransportParams p = TransportParams::neutral(grid);
  const double* x = this->x.data();
  std::size_t o = 0;
  for (auto& c : p.potential.components)
    for (std::size_t i = 0; i < n; ++i) c[i] = x[o++];
  for (auto& c : p.spectral.b)
    for (std::size_t i = 0; i < n; ++i) c[i] = x[o++];
  for (auto& c : p.spectral.lambda)
    for (std::size_t i = 0; i < n; ++i) c[i] = softplus(x[o++]);
  for (std::size_t i = 0; i < n; ++i) p.anomaly.a[i] = anomaly_from_raw(x[o++]);
  for (std::size_t i = 0; i < n; ++i) p.sigma[i] = softplus(x[o++]);
  return p;
}

std::vector<std::size_t> window_starts(std::size_t n_frames, const FitConfig& cfg) {
  std::vector<std::size_t> s;
  if (cfg.n_in > n_frames) return s;
  const std::size_t stride = cfg.window_stride ? cfg.window_stride
                                               : std::max<std::size_t>(cfg.n_in - 1, 1);
  for (std::size_t a = 0; a + cfg.n_in <= n_frames; a += stride) s.push_back(a);
  const std::size_t last = n_frames - cfg.n_in;
  if (s.back() != last) s.push_back(last);
  return s;
}

LossEval evaluate(const RawParams& raw, const TimeSeries& observed,
                  const FitConfig& cfg, const TransportParams* truth,
                  bool want_grad) {
  const Grid& g = raw.grid;
  const std::size_t n = g.size();
  const int d = g.ndim();
  const int ne = TensorField::entry_count(d);
  const int nb = skew_count(d);
  const int alpha = stencil::potential_components(g);
  const TransportParams P = raw.to_params();
  const DerivedFields f = derive(P);
  const LossWeights w = cfg.weights();

  std::vector<double> g_vbar, g_v, g_dbar, g_d, g_a, g_lam, g_sigma;
  std::vector<Mat> g_u;
  if (want_grad) {
    g_vbar.assign(d * n, 0.0);
    g_v.assign(d * n, 0.0);
    g_dbar.assign(ne * n, 0.0);
    g_d.assign(ne * n, 0.0);
    g_a.assign(n, 0.0);
    g_lam.assign(d * n, 0.0);
    g_sigma.assign(n, 0.0);
    g_u.assign(n, Mat(d));
  }
  auto axpy = [](std::vector<double>& y, double a, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  };

  LossEval out;
  if (cfg.mode == FitMode::PhysicsInformed) {
    if (!truth) throw ConfigError("fit: physics mode requires ground truth");
    const DerivedFields t = derive(*truth);
    VdGrad vg;
    UlGrad ug;
    out.pieces.vd = loss_vd(t, f, want_grad ? &vg : nullptr);
    out.pieces.ul = loss_ul(t.u, t.lam, f.u, f.lam, d, want_grad ? &ug : nullptr);
    if (want_grad) {
      axpy(g_vbar, 1.0, vg.v_bar);
      axpy(g_v, 1.0, vg.v);
      axpy(g_dbar, 1.0, vg.d_bar);
      axpy(g_d, 1.0, vg.d);
      axpy(g_a, 1.0, vg.a);
      axpy(g_lam, w.w_ul, ug.lam);
      for (std::size_t i = 0; i < n; ++i) g_u[i] = w.w_ul * ug.u[i];
    }
  } else {
    const SolverConfig scfg = solver_for(observed, cfg);
    const TransportOperator op(g, f.v, f.d, cfg.form);
    const SubstepPlan plan = plan_substeps(cfl_max_dt(f.v, f.d, scfg), scfg);
    const auto mask = boundary_mask(g);
    const auto starts = window_starts(observed.size(), cfg);
    const double scale = 1.0 / static_cast<double>(starts.size());
    std::vector<WindowGrad> wins(starts.size());
    parallel_for(starts.size(), [&](std::size_t k) {
      wins[k] = window_pass(op, mask, plan, observed, starts[k], cfg.n_out, scale,
                            want_grad);
    });
    std::vector<double> losses;
    for (const auto& wg : wins) losses.push_back(wg.loss);
    out.pieces.cc = pairwise_sum(losses) * scale;
    if (want_grad) {
      std::vector<std::vector<double>> gvs, gds;
      for (auto& wg : wins) {
        gvs.push_back(std::move(wg.gv));
        gds.push_back(std::move(wg.gd));
      }
      axpy(g_v, 1.0, pairwise_sum(std::move(gvs)));
      axpy(g_d, 1.0, pairwise_sum(std::move(gds)));
    }
    std::vector<double> sv, sd;
    out.pieces.ss = loss_ss(f.v, f.d, want_grad ? &sv : nullptr,
                            want_grad ? &sd : nullptr);
    if (want_grad) {
      axpy(g_v, w.w_ss, sv);
      axpy(g_d, w.w_ss, sd);
    }
    if (truth) {
      std::vector<double> gs;
      out.pieces.sigma = loss_sigma(truth->anomaly.a, P.sigma,
                                    want_grad ? &gs : nullptr);
      if (want_grad) axpy(g_sigma, w.w_sigma, gs);
    }
  }
  const TotalLoss tl = total_loss(cfg.mode, out.pieces, w);
  out.loss = tl.value;
  out.sigma_active = tl.sigma_active;
  if (!want_grad) return out;

  // D = A * Dbar.
  for (int e = 0; e < ne; ++e) {
    for (std::size_t i = 0; i < n; ++i) {
      const double gd = g_d[e * n + i];
      g_dbar[e * n + i] += f.a[i] * gd;
      g_a[i] += gd * f.d_bar.entry(e)[i];
    }
  }
  out.grad.assign(raw.x.size(), 0.0);
  double* gr = out.grad.data();
  // Dbar = U Lambda U^T, U = exp(B - B^T).
  std::array<double, 3> bc{};
  for (std::size_t i = 0; i < n; ++i) {
    Mat s(d);
    for (int r = 0; r < d; ++r) {
      for (int c = r; c < d; ++c) {
        const double ge = g_dbar[TensorField::entry_index(d, r, c) * n + i];
        if (r == c) {
          s(r, r) = ge;
        } else {
          s(r, c) = 0.5 * ge;
          s(c, r) = 0.5 * ge;
        }
      }
    }
    const Mat& u = f.u[i];
    Mat lam_m(d);
    for (int m = 0; m < d; ++m) lam_m(m, m) = f.lam[i][m];
    const Mat gu = g_u[i] + 2.0 * (s * u * lam_m);
    for (int m = 0; m < d; ++m) {
      double q = 0.0;
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) q += u(r, m) * s(r, c) * u(c, m);
      g_lam[m * n + i] += q;
    }
    for (int k = 0; k < nb; ++k) bc[k] = P.spectral.b[k][i];
    const auto gb = matrix_exp_skew_vjp(std::span<const double>(bc.data(), nb), d, gu);
    for (int k = 0; k < nb; ++k) gr[raw.offset(Block::B) + k * n + i] = gb[k];
  }
  // v = curl(A Psi), vbar = curl(Psi).
  std::vector<double> g_apsi(alpha * n, 0.0);
  std::span<double> gpsi(gr + raw.offset(Block::Psi), alpha * n);
  stencil::curl_transpose_flat(g, g_v, g_apsi);
  stencil::curl_transpose_flat(g, g_vbar, gpsi);
  for (int c = 0; c < alpha; ++c) {
    const auto& psi = P.potential.components[c];
    for (std::size_t i = 0; i < n; ++i) {
      gpsi[c * n + i] += f.a[i] * g_apsi[c * n + i];
      g_a[i] += psi[i] * g_apsi[c * n + i];
    }
  }
  const double* x = raw.x.data();
  for (int m = 0; m < d; ++m) {
    const std::size_t o = raw.offset(Block::Lambda) + m * n;
    for (std::size_t i = 0; i < n; ++i) gr[o + i] = g_lam[m * n + i] * sigmoid(x[o + i]);
  }
  {
    const std::size_t o = raw.offset(Block::A);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = sigmoid(x[o + i]);
      gr[o + i] = g_a[i] * (1.0 - kAnomalyFloor) * s * (1.0 - s);
    }
  }
  {
    const std::size_t o = raw.offset(Block::Sigma);
    for (std::size_t i = 0; i < n; ++i) gr[o + i] = g_sigma[i] * sigmoid(x[o + i]);
  }
  for (Block b : {Block::Psi, Block::B, Block::Lambda, Block::A, Block::Sigma}) {
    check_block(std::span<const double>(gr + raw.offset(b), raw.count(b)), b);
  }
  return out;
}

FitResult fit(const TimeSeries& observed, const FitConfig& cfg,
              const TransportParams* truth) {
  observed.validate();
  cfg.validate(observed.size());
  if (cfg.mode == FitMode::PhysicsInformed && !truth) {
    throw ConfigError("fit: physics mode requires ground truth");
  }
  const Grid g = observed.grid.with_boundary(Boundary::CauchyPatch);
  TimeSeries obs = observed;
  obs.grid = g;

  RawParams raw;
  // Loss at the entry point; improvements by either stage count against it.
  double entry_loss = std::numeric_limits<double>::infinity();
  bool warm_improved = false;
  if (cfg.init) {
    raw = RawParams::from_params(*cfg.init, g);
  } else {
    // Start from whichever of the moment guess and two motionless isotropic
    // candidates fits best.
    GlobalParams gp = moment_guess(obs);
    double gp_loss = evaluate(expand_global(g, gp), obs, cfg, truth, false).loss;
    for (double lam : {0.1, 1.0}) {
      GlobalParams still = gp;
      const int d = g.ndim();
      std::fill(still.x.begin(), still.x.end(), 0.0);
      std::fill(still.x.end() - d, still.x.end(), inv_softplus(lam));
      const double l = evaluate(expand_global(g, still), obs, cfg, truth, false).loss;
      if (std::isfinite(l) && !(gp_loss <= l)) {
        gp = still;
        gp_loss = l;
      }
    }
    raw = expand_global(g, gp);
    if (cfg.global_iters > 0) {
      GlobalParams best = gp;
      double best_loss = gp_loss;
      entry_loss = best_loss;
      Adam adam;
      for (std::size_t it = 0; it < cfg.global_iters; ++it) {
        const RawParams cur = expand_global(g, gp);
        const LossEval ev = evaluate(cur, obs, cfg, truth, true);
        if (!std::isfinite(ev.loss)) break;
        if (ev.loss < best_loss) {
          best_loss = ev.loss;
          best = gp;
        }
        const auto gg = reduce_global(cur, ev.grad);
        const double frac = static_cast<double>(it) / cfg.global_iters;
        const double lr = cfg.global_step *
                          (0.02 + 0.98 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
        adam.step(gp.x, gg, lr, cfg);
      }
      const double last = evaluate(expand_global(g, gp), obs, cfg, truth, false).loss;
      if (std::isfinite(last) && last < best_loss) {
        best_loss = last;
        best = gp;
      }
      warm_improved = best_loss < entry_loss;
      raw = expand_global(g, best);
    }
  }

  FitResult res;
  LossEval ev = evaluate(raw, obs, cfg, truth, true);
  if (!std::isfinite(ev.loss)) throw NumericalError("fit: initial loss is not finite");
  res.sigma_active = ev.sigma_active;
  if (cfg.check_gradient) {
    CounterRng rng(cfg.seed, 0x6763u);
    std::vector<double> dir(raw.x.size());
    for (double& x : dir) x = rng.normal();
    double xmax = 1.0;
    for (double x : raw.x) xmax = std::max(xmax, std::abs(x));
    const double eps = 1e-6 * xmax;
    RawParams p = raw, m = raw;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      p.x[i] += eps * dir[i];
      m.x[i] -= eps * dir[i];
    }
    const double fd = (evaluate(p, obs, cfg, truth, false).loss -
                       evaluate(m, obs, cfg, truth, false).loss) / (2.0 * eps);
    double ad = 0.0;
    for (std::size_t i = 0; i < dir.size(); ++i) ad += ev.grad[i] * dir[i];
    const double den = std::max({std::abs(fd), std::abs(ad), 1e-300});
    res.grad_check = std::abs(fd - ad) / den;
  }
  const double initial = ev.loss;
  double best_loss = initial;
  RawParams best = raw;
  res.loss_trace.push_back(initial);
  res.raw_trace.push_back(initial);
  res.grad_norm.push_back(norm2(ev.grad));
  if (initial <= cfg.tolerance) {
    res.params_hat = best.to_params();
    return res;
  }
  Adam adam;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    adam.step(raw.x, ev.grad, cfg.step_size, cfg);
    ev = evaluate(raw, obs, cfg, truth, true);
    if (!std::isfinite(ev.loss)) throw NumericalError("fit: loss diverged (NaN)");
    ++res.iterations;
    if (ev.loss < best_loss) {
      best_loss = ev.loss;
      best = raw;
    }
    res.loss_trace.push_back(best_loss);
    res.raw_trace.push_back(ev.loss);
    res.grad_norm.push_back(norm2(ev.grad));
  }
  if (res.iterations > 0 && !(best_loss < initial) && !warm_improved) {
    throw NumericalError("fit: iteration budget exhausted without improvement");
  }
  res.params_hat = best.to_params();
  return res;
}

TimeSeries reconstruct(const TimeSeries& observed, const TransportParams& params,
                       const FitConfig& cfg) {
  observed.validate();
  const Grid g = observed.grid.with_boundary(Boundary::CauchyPatch);
  TimeSeries obs = observed;
  obs.grid = g;
  const ScalarField c0(g, observed.frames.front().data());
  SolverConfig s = solver_for(observed, cfg);
  TimeSeries out = integrate(c0, params, s, observed.size(), &obs);
  out.grid = observed.grid;
  return out;
}

}  // namespace adpde
