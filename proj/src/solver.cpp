#include "adpde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"
#include "adpde/rng.hpp"
#include "adpde/small_matrix.hpp"

namespace adpde {
namespace {

template <typename Fn>
void for_each_face(const Grid& g, int axis, Fn&& fn) {
  const std::size_t st = g.stride(axis);
  const std::size_t n = g.shape(axis);
  const std::size_t block = n * st;
  const std::size_t nouter = g.size() / block;
  for (std::size_t outer = 0; outer < nouter; ++outer) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t base = outer * block + i * st;
      for (std::size_t inner = 0; inner < st; ++inner) {
        fn(base + inner, base + inner + st);
      }
    }
  }
}

// Local 2x2 coupling of a face: rows (L, R), columns (c_L, c_R).
struct FaceMat {
  double ll, lr, rl, rr;
};

inline FaceMat face_matrix(AdvectionForm form, double u, double ih) {
  const double up = std::max(u, 0.0) * ih;
  const double um = std::min(u, 0.0) * ih;
  if (form == AdvectionForm::Conservative) return {-up, -um, up, um};
  return {um, -um, up, -up};
}

inline FaceMat face_matrix_du(AdvectionForm form, double u, double ih) {
  const double hp = (u > 0.0 ? 1.0 : (u < 0.0 ? 0.0 : 0.5)) * ih;
  const double hm = ih - hp;
  if (form == AdvectionForm::Conservative) return {-hp, -hm, hp, hm};
  return {hm, -hm, hp, -hp};
}

Mat cell_tensor(const TensorField& d, std::size_t i) {
  const int dim = d.dim();
  Mat m(dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = d(i, r, c);
  return m;
}

void check_blowup(std::span<const double> c, double limit) {
  for (double x : c) {
    if (!std::isfinite(x) || std::abs(x) > limit) {
      throw NumericalError("integrate: state blew up (non-finite or above guard)");
    }
  }
}

}  // namespace

void SolverConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ConfigError("solver: dt must be positive");
  }
  if (substep && (!(*substep > 0.0) || *substep > dt)) {
    throw ConfigError("solver: substep must lie in (0, dt]");
  }
  if (!(cfl_safety > 0.0 && cfl_safety <= 1.0)) {
    throw ConfigError("solver: cfl_safety must lie in (0, 1]");
  }
  if (!(rtol > 0.0) || !(atol > 0.0)) {
    throw ConfigError("solver: tolerances must be positive");
  }
}

void TimeSeries::validate() const {
  if (frames.size() < 2) throw ConfigError("time series: need at least 2 frames");
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ConfigError("time series: dt must be positive");
  }
  for (const auto& f : frames) {
    require_same_grid(grid, f.grid(), "time series");
    if (!f.all_finite()) throw ConfigError("time series: non-finite sample");
  }
}

TimeSeries TimeSeries::slice(std::size_t first, std::size_t count) const {
  if (first + count > frames.size()) {
    throw ConfigError("time series: slice out of range");
  }
  TimeSeries out{grid, dt, {}};
  out.frames.assign(frames.begin() + first, frames.begin() + first + count);
  return out;
}

TransportOperator::TransportOperator(const Grid& g, const VectorField& v,
                                     const TensorField& d, AdvectionForm form)
    : grid_(g), form_(form) {
  require_same_grid(g, v.grid(), "transport operator");
  require_same_grid(g, d.grid(), "transport operator");
  const int dim = g.ndim();
  face_u_.assign(dim, std::vector<double>(g.size(), 0.0));
  for (int k = 0; k < dim; ++k) {
    const auto& vk = v[k];
    auto& fu = face_u_[k];
    for_each_face(g, k, [&](std::size_t l, std::size_t r) {
      fu[l] = 0.5 * (vk[l] + vk[r]);
    });
  }
  dent_.resize(d.nentries());
  for (int e = 0; e < d.nentries(); ++e) dent_[e] = d.entry(e).data();
}

void TransportOperator::advection(std::span<const double> c,
                                  std::span<double> out,
                                  bool transpose) const {
  for (int k = 0; k < grid_.ndim(); ++k) {
    const double ih = 1.0 / grid_.spacing(k);
    const auto& fu = face_u_[k];
    for_each_face(grid_, k, [&](std::size_t l, std::size_t r) {
      const FaceMat m = face_matrix(form_, fu[l], ih);
      if (!transpose) {
        out[l] += m.ll * c[l] + m.lr * c[r];
        out[r] += m.rl * c[l] + m.rr * c[r];
      } else {
        out[l] += m.ll * c[l] + m.rl * c[r];
        out[r] += m.lr * c[l] + m.rr * c[r];
      }
    });
  }
}

void TransportOperator::diffusion(std::span<const double> c,
                                  std::span<double> out,
                                  bool transpose) const {
  const int dim = grid_.ndim();
  const std::size_t n = grid_.size();
  const bool neumann = grid_.boundary() == Boundary::NeumannZeroFlux;
  const auto gk = neumann ? stencil::Kind::ReflectedGrad : stencil::Kind::OneSided;
  const auto dk = neumann ? stencil::Kind::ZeroFluxDiv : stencil::Kind::OneSided;
  std::vector<std::vector<double>> t(dim, std::vector<double>(n));
  std::vector<double> flux(n);
  if (!transpose) {
    for (int j = 0; j < dim; ++j) stencil::axis_diff(grid_, j, gk, c, t[j]);
    for (int k = 0; k < dim; ++k) {
      std::fill(flux.begin(), flux.end(), 0.0);
      for (int j = 0; j < dim; ++j) {
        const auto& dkj = dent_[TensorField::entry_index(dim, k, j)];
        for (std::size_t i = 0; i < n; ++i) flux[i] += dkj[i] * t[j][i];
      }
      stencil::axis_diff(grid_, k, dk, flux, out, true);
    }
    return;
  }
  for (int k = 0; k < dim; ++k) {
    stencil::axis_diff_transpose(grid_, k, dk, c, t[k]);
  }
  for (int j = 0; j < dim; ++j) {
    std::fill(flux.begin(), flux.end(), 0.0);
    for (int k = 0; k < dim; ++k) {
      const auto& dkj = dent_[TensorField::entry_index(dim, k, j)];
      for (std::size_t i = 0; i < n; ++i) flux[i] += dkj[i] * t[k][i];
    }
    stencil::axis_diff_transpose(grid_, j, gk, flux, out, true);
  }
}

void TransportOperator::apply(std::span<const double> c,
                              std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  advection(c, out, false);
  diffusion(c, out, false);
}

void TransportOperator::apply_transpose(std::span<const double> w,
                                        std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  advection(w, out, true);
  diffusion(w, out, true);
}

void TransportOperator::accumulate_param_grad(std::span<const double> w,
                                              std::span<const double> c,
                                              std::span<double> gv,
                                              std::span<double> gd) const {
  const int dim = grid_.ndim();
  const std::size_t n = grid_.size();
  for (int k = 0; k < dim; ++k) {
    const double ih = 1.0 / grid_.spacing(k);
    const auto& fu = face_u_[k];
    double* gk = gv.data() + k * n;
    for_each_face(grid_, k, [&](std::size_t l, std::size_t r) {
      const FaceMat m = face_matrix_du(form_, fu[l], ih);
      const double s = w[l] * (m.ll * c[l] + m.lr * c[r]) +
                       w[r] * (m.rl * c[l] + m.rr * c[r]);
      gk[l] += 0.5 * s;
      gk[r] += 0.5 * s;
    });
  }
  const bool neumann = grid_.boundary() == Boundary::NeumannZeroFlux;
  const auto gkind = neumann ? stencil::Kind::ReflectedGrad : stencil::Kind::OneSided;
  const auto dkind = neumann ? stencil::Kind::ZeroFluxDiv : stencil::Kind::OneSided;
  std::vector<std::vector<double>> grad(dim, std::vector<double>(n));
  std::vector<std::vector<double>> tw(dim, std::vector<double>(n));
  for (int k = 0; k < dim; ++k) {
    stencil::axis_diff(grid_, k, gkind, c, grad[k]);
    stencil::axis_diff_transpose(grid_, k, dkind, w, tw[k]);
  }
  for (int r = 0; r < dim; ++r) {
    for (int q = r; q < dim; ++q) {
      double* ge = gd.data() + TensorField::entry_index(dim, r, q) * n;
      for (std::size_t i = 0; i < n; ++i) {
        double s = tw[r][i] * grad[q][i];
        if (q != r) s += tw[q][i] * grad[r][i];
        ge[i] += s;
      }
    }
  }
}

ScalarField advection_rhs(const ScalarField& c, const VectorField& v,
                          AdvectionForm form) {
  const Grid& g = c.grid();
  require_same_grid(g, v.grid(), "advection_rhs");
  ScalarField out(g);
  for (int k = 0; k < g.ndim(); ++k) {
    const double ih = 1.0 / g.spacing(k);
    for_each_face(g, k, [&](std::size_t l, std::size_t r) {
      const double u = 0.5 * (v[k][l] + v[k][r]);
      const FaceMat m = face_matrix(form, u, ih);
      out[l] += m.ll * c[l] + m.lr * c[r];
      out[r] += m.rl * c[l] + m.rr * c[r];
    });
  }
  return out;
}

ScalarField diffusion_rhs(const ScalarField& c, const TensorField& d) {
  return laplacian_tensor(c, d);
}

double cfl_max_dt(const VectorField& v, const TensorField& d,
                  const SolverConfig& cfg) {
  const Grid& g = v.grid();
  require_same_grid(g, d.grid(), "cfl_max_dt");
  const int dim = g.ndim();
  double rate = 0.0;
  double hmin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < dim; ++k) {
    rate += v[k].max_abs() / g.spacing(k);
    hmin = std::min(hmin, g.spacing(k));
  }
  double lmax = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto ev = symmetric_eigenvalues(cell_tensor(d, i));
    lmax = std::max(lmax, ev[dim - 1]);
  }
  if (rate == 0.0 && lmax <= 0.0) return cfg.dt;
  double bound = std::numeric_limits<double>::infinity();
  if (rate > 0.0) bound = 1.0 / rate;
  if (lmax > 0.0) bound = std::min(bound, hmin * hmin / (2.0 * dim * lmax));
  return cfg.cfl_safety * bound;
}

SubstepPlan plan_substeps(double bound, const SolverConfig& cfg) {
  double target = bound;
  if (cfg.substep) {
    if (*cfg.substep > bound * (1.0 + 1e-12)) {
      throw NumericalError("cfl: substep " + std::to_string(*cfg.substep) +
                           " exceeds stability bound " + std::to_string(bound));
    }
    target = *cfg.substep;
  }
  const double ratio = cfg.dt / target;
  if (!std::isfinite(ratio) || ratio > 1e8) {
    throw NumericalError("cfl: stability bound too small for dt");
  }
  SubstepPlan p;
  p.count = static_cast<std::size_t>(std::max(1.0, std::ceil(ratio - 1e-9)));
  p.step = cfg.dt / static_cast<double>(p.count);
  return p;
}

std::vector<std::uint8_t> boundary_mask(const Grid& g) {
  std::vector<std::uint8_t> m(g.size(), 0);
  if (g.boundary() != Boundary::CauchyPatch) return m;
  for (std::size_t i = 0; i < g.size(); ++i) m[i] = g.interior(i) ? 0 : 1;
  return m;
}

void Rk4Scratch::resize(std::size_t n) {
  k1.resize(n);
  k2.resize(n);
  k3.resize(n);
  k4.resize(n);
  x.resize(n);
}

namespace {

void eval_rhs(const TransportOperator& op, std::span<const std::uint8_t> mask,
              std::span<const double> rate, std::span<const double> c,
              std::span<double> out) {
  op.apply(c, out);
  if (mask.empty()) return;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = rate.empty() ? 0.0 : rate[i];
  }
}

}  // namespace

void rk4_substep(const TransportOperator& op, std::span<const std::uint8_t> mask,
                 std::span<const double> rate, double h, std::span<double> c,
                 Rk4Scratch& s) {
  const std::size_t n = c.size();
  s.resize(n);
  eval_rhs(op, mask, rate, c, s.k1);
  for (std::size_t i = 0; i < n; ++i) s.x[i] = c[i] + 0.5 * h * s.k1[i];
  eval_rhs(op, mask, rate, s.x, s.k2);
  for (std::size_t i = 0; i < n; ++i) s.x[i] = c[i] + 0.5 * h * s.k2[i];
  eval_rhs(op, mask, rate, s.x, s.k3);
  for (std::size_t i = 0; i < n; ++i) s.x[i] = c[i] + h * s.k3[i];
  eval_rhs(op, mask, rate, s.x, s.k4);
  const double w = h / 6.0;
  for (std::size_t i = 0; i < n; ++i) {
    c[i] += w * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
  }
}

namespace {

// Dormand-Prince 5(4).
constexpr double kA[7][6] = {
    {0, 0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB[7] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192,
                          -2187.0 / 6784, 11.0 / 84, 0};
constexpr double kE[7] = {71.0 / 57600,  0,          -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

struct Rk45State {
  std::vector<std::vector<double>> k;
  std::vector<double> x, y;
};

// Attempts one step; returns the scaled error norm and leaves the
// candidate in s.y.
double rk45_attempt(const TransportOperator& op,
                    std::span<const std::uint8_t> mask,
                    std::span<const double> rate, std::span<const double> c,
                    double h, const SolverConfig& cfg, Rk45State& s) {
  const std::size_t n = c.size();
  s.k.resize(7);
  for (auto& k : s.k) k.resize(n);
  s.x.resize(n);
  s.y.resize(n);
  for (int st = 0; st < 7; ++st) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < st; ++j) acc += kA[st][j] * s.k[j][i];
      s.x[i] = c[i] + h * acc;
    }
    eval_rhs(op, mask, rate, s.x, s.k[st]);
  }
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0, e = 0.0;
    for (int j = 0; j < 7; ++j) {
      acc += kB[j] * s.k[j][i];
      e += kE[j] * s.k[j][i];
    }
    s.y[i] = c[i] + h * acc;
    const double scale =
        cfg.atol + cfg.rtol * std::max(std::abs(c[i]), std::abs(s.y[i]));
    err = std::max(err, std::abs(h * e) / scale);
  }
  return err;
}

}  // namespace

TimeSeries integrate(const ScalarField& c0, const TransportParams& params,
                     const SolverConfig& cfg, std::size_t n_frames,
                     const TimeSeries* boundary) {
  cfg.validate();
  params.validate();
  const Grid& g = c0.grid();
  require_same_grid(g, params.grid(), "integrate");
  if (n_frames < 2) throw ConfigError("integrate: need at least 2 frames");
  if (!c0.all_finite()) throw ConfigError("integrate: non-finite initial state");
  const bool cauchy = g.boundary() == Boundary::CauchyPatch;
  if (boundary) {
    if (boundary->size() < n_frames) {
      throw ConfigError("integrate: boundary series shorter than run");
    }
    require_same_grid(g, boundary->grid, "integrate boundary");
  }

  const auto fields = derive(params);
  const TransportOperator op(g, fields.v, fields.d, cfg.form);
  const double bound = cfl_max_dt(fields.v, fields.d, cfg);
  const SubstepPlan plan = plan_substeps(bound, cfg);
  const auto mask = boundary_mask(g);
  const std::size_t n = g.size();
  const double limit = 1e6 * std::max(c0.max_abs(), 1.0);
  const NoiseProcess noise(cfg.seed);
  const auto& sigma = params.sigma;
  const bool noisy = cfg.stochastic && sigma.max_abs() > 0.0;

  TimeSeries out{g, cfg.dt, {}};
  out.frames.reserve(n_frames);
  out.frames.push_back(c0);
  std::vector<double> c(c0.values().begin(), c0.values().end());
  std::vector<double> rate;
  std::vector<double> eta(noisy ? n : 0);
  Rk4Scratch rk4;
  Rk45State rk45;

  auto add_noise = [&](std::uint32_t frame, std::uint32_t sub, double h) {
    if (!noisy) return;
    noise.fill(frame, sub, eta);
    const double sh = std::sqrt(h);
    for (std::size_t i = 0; i < n; ++i) {
      if (cauchy && mask[i]) continue;
      c[i] += sigma[i] * sh * eta[i];
    }
  };

  for (std::size_t j = 0; j + 1 < n_frames; ++j) {
    rate.clear();
    if (cauchy && boundary) {
      rate.resize(n);
      const auto& a = boundary->frames[j];
      const auto& b = boundary->frames[j + 1];
      for (std::size_t i = 0; i < n; ++i) {
        rate[i] = mask[i] ? (b[i] - a[i]) / cfg.dt : 0.0;
      }
    }
    const auto frame = static_cast<std::uint32_t>(j);
    if (cfg.integrator == Integrator::RK4Fixed) {
      for (std::size_t s = 0; s < plan.count; ++s) {
        rk4_substep(op, mask, rate, plan.step, c, rk4);
        add_noise(frame, static_cast<std::uint32_t>(s), plan.step);
        check_blowup(c, limit);
      }
    } else {
      double t = 0.0;
      double h = std::min(bound, cfg.dt);
      std::uint32_t accepted = 0;
      while (t < cfg.dt) {
        bool last = false;
        if (t + h >= cfg.dt * (1.0 - 1e-12)) {
          h = cfg.dt - t;
          last = true;
        }
        const double err = rk45_attempt(op, mask, rate, c, h, cfg, rk45);
        if (!std::isfinite(err)) {
          throw NumericalError("integrate: non-finite RK45 error estimate");
        }
        if (err <= 1.0) {
          c.swap(rk45.y);
          t = last ? cfg.dt : t + h;
          add_noise(frame, accepted++, h);
          check_blowup(c, limit);
        }
        const double fac =
            err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
        h = std::min(h * fac, bound);
        if (h < 1e-14 * cfg.dt && t < cfg.dt) {
          throw NumericalError("integrate: RK45 step size underflow");
        }
      }
    }
    if (cauchy && boundary) {
      const auto& b = boundary->frames[j + 1];
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) c[i] = b[i];
      }
    }
    out.frames.emplace_back(g, c);
  }
  return out;
}

WellposednessReport wellposedness_report(const TransportParams& params) {
  params.validate();
  const Grid& g = params.grid();
  const int dim = g.ndim();
  const auto f = derive(params);
  const auto& sigma = params.sigma;
  auto tensor_diff2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) {
        const double x = f.d(a, r, c) - f.d(b, r, c);
        s += x * x;
      }
    return s;
  };
  WellposednessReport rep;
  for (int k = 0; k < dim; ++k) {
    const double h2 = g.spacing(k) * g.spacing(k);
    for_each_face(g, k, [&](std::size_t l, std::size_t r) {
      double s = tensor_diff2(l, r);
      for (int c = 0; c < dim; ++c) {
        const double x = f.v[c][l] - f.v[c][r];
        s += x * x;
      }
      const double ds = sigma[l] - sigma[r];
      s += ds * ds;
      rep.lipschitz = std::max(rep.lipschitz, s / h2);
    });
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    double s = 0.0;
    for (int c = 0; c < dim; ++c) s += f.v[c][i] * f.v[c][i];
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) s += f.d(i, r, c) * f.d(i, r, c);
    s += sigma[i] * sigma[i];
    const auto idx = g.unravel(i);
    double x2 = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double x = g.coord(k, idx[k]);
      x2 += x * x;
    }
    rep.growth = std::max(rep.growth, s / (1.0 + x2));
  }
  return rep;
}

}  // namespace adpde
