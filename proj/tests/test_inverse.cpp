#include <cmath>
#include <cstdlib>
#include <random>

#include "adpde/error.hpp"
#include "adpde/inverse.hpp"
#include "adpde/operators.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace adpde;
using namespace testing_support;

namespace {

ScalarField blob(const Grid& g, double cx, double cy, double s) {
  ScalarField f(g);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.unravel(c);
    const double dx = g.coord(0, idx[0]) - cx, dy = g.coord(1, idx[1]) - cy;
    f[c] = std::exp(-(dx * dx + dy * dy) / (2 * s * s));
  }
  return f;
}

// Smooth parameters whose fields stay away from the upwind switch and the
// eigenvector-sign tie of loss_ul.
TransportParams smooth_params(const Grid& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a1 = u(rng), a2 = u(rng), ph = u(rng);
  TransportParams p = TransportParams::neutral(g);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.unravel(c);
    const double x = g.coord(0, idx[0]), y = g.coord(1, idx[1]);
    p.potential.components[0][c] = 2.0 * y + 0.5 * x + a1 * std::sin(0.3 * x + ph) +
                                   a2 * std::cos(0.25 * y);
    p.spectral.b[0][c] = 0.4 + 0.2 * std::sin(0.2 * x + 0.1 * y + ph);
    p.spectral.lambda[0][c] = 0.3 + 0.1 * std::cos(0.3 * y + a2);
    p.spectral.lambda[1][c] = 0.6 + 0.1 * std::sin(0.2 * x + ph);
    p.anomaly.a[c] = 0.55 + 0.3 * std::cos(0.15 * x + 0.2 * y + a1);
    p.sigma[c] = 0.2 + 0.1 * std::sin(0.3 * x);
  }
  return p;
}

TimeSeries observe(const TransportParams& p, std::size_t frames, double dt) {
  const Grid& g = p.grid();
  SolverConfig cfg;
  cfg.dt = dt;
  const double c = 0.5 * (g.shape(0) - 1);
  TimeSeries ts = integrate(blob(g, c - 1.0, c + 0.5, 2.5), p, cfg, frames);
  return ts;
}

struct FdResult {
  double err, fd, ad;
};

FdResult fd_check(const RawParams& raw, const TimeSeries& obs, const FitConfig& cfg,
                  const TransportParams* truth, Block b, std::size_t k) {
  const LossEval ev = evaluate(raw, obs, cfg, truth, true);
  const std::size_t i = raw.offset(b) + k;
  const double h = 1e-5 * std::max(1.0, std::abs(raw.x[i]));
  RawParams p = raw, m = raw;
  p.x[i] += h;
  m.x[i] -= h;
  const double fd = (evaluate(p, obs, cfg, truth, false).loss -
                     evaluate(m, obs, cfg, truth, false).loss) / (2 * h);
  const double ad = ev.grad[i];
  const double scale = std::max({std::abs(fd), std::abs(ad), 1e-8});
  return {std::abs(fd - ad) / scale, fd, ad};
}

}  // namespace

TEST_CASE("reparameterizations") {
  for (double y : {1e-6, 0.01, 0.5, 3.0, 40.0}) {
    CHECK(softplus(inv_softplus(y)) == doctest::Approx(y).epsilon(1e-10));
  }
  CHECK(softplus(-800.0) == 0.0);
  for (double r : {-50.0, -3.0, 0.0, 2.0, 50.0}) {
    const double a = anomaly_from_raw(r);
    CHECK(a >= kAnomalyFloor);
    CHECK(a <= 1.0);
  }
  for (double a : {0.1, 0.5, 0.9}) {
    CHECK(anomaly_from_raw(raw_from_anomaly(a)) == doctest::Approx(a).epsilon(1e-12));
  }
  CHECK(std::isfinite(raw_from_anomaly(1.0)));
  CHECK(std::isfinite(raw_from_anomaly(kAnomalyFloor)));
}

TEST_CASE("raw parameter layout round-trips") {
  std::mt19937_64 rng(1);
  for (const Grid& g : {Grid::make2d(6, 5), Grid::make3d(4, 3, 5)}) {
    const TransportParams p = random_params(g, rng);
    const RawParams raw = RawParams::from_params(p, g);
    const std::size_t n = g.size();
    const std::size_t alpha = g.ndim() == 2 ? 1 : 3, nb = g.ndim() == 2 ? 1 : 3;
    CHECK(raw.count(Block::Psi) == alpha * n);
    CHECK(raw.count(Block::B) == nb * n);
    CHECK(raw.offset(Block::Sigma) + n == raw.x.size());
    const TransportParams q = raw.to_params();
    CHECK(q.potential.components[0].data() == p.potential.components[0].data());
    CHECK(q.spectral.b.back().data() == p.spectral.b.back().data());
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(q.spectral.lambda[1][i] == doctest::Approx(p.spectral.lambda[1][i]).epsilon(1e-9));
      CHECK(q.anomaly.a[i] == doctest::Approx(p.anomaly.a[i]).epsilon(1e-9));
      CHECK(q.sigma[i] == doctest::Approx(p.sigma[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("window starts cover the series") {
  FitConfig cfg;
  CHECK(window_starts(40, cfg) == std::vector<std::size_t>{0, 9, 18, 27, 30});
  CHECK(window_starts(10, cfg) == std::vector<std::size_t>{0});
  cfg.window_stride = 5;
  CHECK(window_starts(22, cfg) == std::vector<std::size_t>{0, 5, 10, 12});
  cfg.n_in = 3;
  cfg.window_stride = 0;
  CHECK(window_starts(3, cfg) == std::vector<std::size_t>{0});
  CHECK(window_starts(6, cfg) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("fit configuration validation") {
  FitConfig cfg;
  CHECK_THROWS_AS(cfg.validate(5), ConfigError);
  cfg.n_in = 5;
  cfg.n_out = 6;
  CHECK_THROWS_AS(cfg.validate(5), ConfigError);
  cfg.n_out = 5;
  CHECK_NOTHROW(cfg.validate(5));
  cfg.w_ss = -1.0;
  CHECK_THROWS_AS(cfg.validate(5), ConfigError);
}

TEST_CASE("adjoint gradient matches finite differences in every block") {
  std::mt19937_64 rng(2);
  const Grid g = Grid::make2d(16, 16, 1.0, 1.0, Boundary::CauchyPatch);
  for (int trial = 0; trial < 3; ++trial) {
    const TransportParams truth = smooth_params(g, rng);
    const TimeSeries obs = observe(smooth_params(g, rng), 3, 0.05);
    FitConfig cfg;
    cfg.n_in = 3;
    cfg.n_out = 3;
    for (FitMode mode : {FitMode::TransportInformed, FitMode::PhysicsInformed}) {
      cfg.mode = mode;
      const RawParams raw = RawParams::from_params(smooth_params(g, rng), g);
      for (Block b : {Block::Psi, Block::B, Block::Lambda, Block::A, Block::Sigma}) {
        if (mode == FitMode::PhysicsInformed && b == Block::Sigma) continue;
        for (int k = 0; k < 3; ++k) {
          const std::size_t idx = rng() % raw.count(b);
          const FdResult r = fd_check(raw, obs, cfg, &truth, b, idx);
          INFO("mode ", static_cast<int>(mode), " block ", std::string(block_name(b)),
               " index ", idx, " fd ", r.fd, " adjoint ", r.ad);
          CHECK(r.err <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("directional adjoint check in 3D") {
  std::mt19937_64 rng(3);
  const Grid g = Grid::make3d(6, 6, 6, 1.0, Boundary::CauchyPatch);
  TransportParams p = random_params(g, rng, 0.5);
  for (auto& b : p.spectral.b) b = ScalarField(g, 0.3);
  TimeSeries obs{g, 0.05, {}};
  for (int f = 0; f < 3; ++f) obs.frames.push_back(random_scalar(g, rng, 0.0, 1.0));
  FitConfig cfg;
  cfg.n_in = 3;
  cfg.n_out = 3;
  const RawParams raw = RawParams::from_params(p, g);
  const LossEval ev = evaluate(raw, obs, cfg, &p, true);
  std::vector<double> dir(raw.x.size());
  for (double& x : dir) x = std::normal_distribution<double>()(rng);
  const double h = 1e-6;
  RawParams a = raw, b = raw;
  double ad = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    a.x[i] += h * dir[i];
    b.x[i] -= h * dir[i];
    ad += ev.grad[i] * dir[i];
  }
  const double fd = (evaluate(a, obs, cfg, &p, false).loss -
                     evaluate(b, obs, cfg, &p, false).loss) / (2 * h);
  CHECK(std::abs(fd - ad) / std::abs(fd) <= 1e-5);
  CHECK(ev.sigma_active);
}

TEST_CASE("gradient vanishes at the physics-informed minimum") {
  std::mt19937_64 rng(4);
  const Grid g = Grid::make2d(8, 8, 1.0, 1.0, Boundary::CauchyPatch);
  const TransportParams truth = RawParams::from_params(smooth_params(g, rng), g).to_params();
  FitConfig cfg;
  cfg.mode = FitMode::PhysicsInformed;
  cfg.n_in = 3;
  cfg.n_out = 3;
  const TimeSeries obs = observe(truth, 3, 0.05);
  const LossEval ev = evaluate(RawParams::from_params(truth, g), obs, cfg, &truth, true);
  CHECK(ev.loss <= 1e-12);
  double nrm = 0.0;
  for (double x : ev.grad) nrm += x * x;
  CHECK(std::sqrt(nrm) <= 1e-10);
}

TEST_CASE("smoothness weight enters linearly") {
  std::mt19937_64 rng(5);
  const Grid g = Grid::make2d(10, 10, 1.0, 1.0, Boundary::CauchyPatch);
  const TimeSeries obs = observe(smooth_params(g, rng), 3, 0.05);
  const RawParams raw = RawParams::from_params(smooth_params(g, rng), g);
  FitConfig cfg;
  cfg.n_in = 3;
  cfg.n_out = 3;
  cfg.w_ss = 0.0;
  const LossEval e0 = evaluate(raw, obs, cfg, nullptr, true);
  CHECK(e0.loss == *e0.pieces.cc);
  CHECK_FALSE(e0.sigma_active);
  cfg.w_ss = 1.0;
  const LossEval e1 = evaluate(raw, obs, cfg, nullptr, true);
  cfg.w_ss = 2.0;
  const LossEval e2 = evaluate(raw, obs, cfg, nullptr, true);
  CHECK(e1.loss == doctest::Approx(*e1.pieces.cc + *e1.pieces.ss).epsilon(1e-14));
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < raw.x.size(); ++i) {
    worst = std::max(worst, std::abs((e2.grad[i] - e1.grad[i]) - (e1.grad[i] - e0.grad[i])));
    scale = std::max(scale, std::abs(e1.grad[i]));
  }
  CHECK(worst <= 1e-12 * std::max(scale, 1.0));
  // Sigma gets no gradient without a ground-truth anomaly field.
  for (std::size_t i = 0; i < raw.count(Block::Sigma); ++i) {
    CHECK(e1.grad[raw.offset(Block::Sigma) + i] == 0.0);
  }
}

TEST_CASE("window losses are independent of the thread cap") {
  std::mt19937_64 rng(6);
  const Grid g = Grid::make2d(12, 12, 1.0, 1.0, Boundary::CauchyPatch);
  const TimeSeries obs = observe(smooth_params(g, rng), 12, 0.05);
  const RawParams raw = RawParams::from_params(smooth_params(g, rng), g);
  FitConfig cfg;
  cfg.n_in = 4;
  cfg.n_out = 4;
  setenv("ADPF_THREADS", "1", 1);
  const LossEval a = evaluate(raw, obs, cfg, nullptr, true);
  setenv("ADPF_THREADS", "4", 1);
  const LossEval b = evaluate(raw, obs, cfg, nullptr, true);
  unsetenv("ADPF_THREADS");
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("fit started at the truth stops immediately") {
  std::mt19937_64 rng(7);
  const Grid g = Grid::make2d(10, 10, 1.0, 1.0, Boundary::CauchyPatch);
  const TransportParams truth = smooth_params(g, rng);
  const TimeSeries obs = observe(truth, 4, 0.05);
  FitConfig cfg;
  cfg.n_in = 4;
  cfg.n_out = 4;
  cfg.w_ss = 0.0;
  cfg.init = truth;
  const FitResult r = fit(obs, cfg);
  CHECK(r.iterations == 0);
  CHECK(r.loss_trace.front() <= 1e-14);
  cfg.mode = FitMode::PhysicsInformed;
  const FitResult q = fit(obs, cfg, &truth);
  CHECK(q.iterations == 0);
}

TEST_CASE("fit improves the loss and keeps iterates feasible") {
  std::mt19937_64 rng(8);
  const Grid g = Grid::make2d(12, 12);
  const TransportParams truth = smooth_params(g, rng);
  const TimeSeries obs = observe(truth, 7, 0.05);
  FitConfig cfg;
  cfg.n_in = 4;
  cfg.n_out = 4;
  cfg.max_iters = 30;
  cfg.global_iters = 20;
  const FitResult r = fit(obs, cfg, &truth);
  CHECK(r.sigma_active);
  CHECK(r.grad_check <= 1e-4);
  REQUIRE(r.loss_trace.size() == 31);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) {
    CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
  }
  CHECK(r.loss_trace.back() < r.loss_trace.front());
  const DerivedFields f = derive(r.params_hat);
  const ScalarField dv = divergence(f.v);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.interior(i)) CHECK(std::abs(dv[i]) <= 1e-12);
    CHECK(f.a[i] >= kAnomalyFloor);
    CHECK(f.a[i] <= 1.0);
    for (int k = 0; k < 2; ++k) CHECK(f.lam[i][k] >= 0.0);
    CHECK(symmetric_eigenvalues([&] {
            Mat m(2);
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) m(a, b) = f.d(i, a, b);
            return m;
          }())[0] >= -1e-12);
  }
  const TimeSeries rec = reconstruct(obs, r.params_hat, cfg);
  CHECK(rec.size() == obs.size());
  CHECK(rec.frames[0].data() == obs.frames[0].data());
  CHECK(rec.grid == obs.grid);
}

TEST_CASE("fit is reproducible across thread caps") {
  std::mt19937_64 rng(9);
  const Grid g = Grid::make2d(10, 10);
  const TimeSeries obs = observe(smooth_params(g, rng), 7, 0.05);
  FitConfig cfg;
  cfg.n_in = 3;
  cfg.n_out = 3;
  cfg.max_iters = 5;
  cfg.global_iters = 5;
  setenv("ADPF_THREADS", "1", 1);
  const FitResult a = fit(obs, cfg);
  setenv("ADPF_THREADS", "3", 1);
  const FitResult b = fit(obs, cfg);
  unsetenv("ADPF_THREADS");
  CHECK(a.raw_trace == b.raw_trace);
  CHECK(a.params_hat.potential.components[0].data() ==
        b.params_hat.potential.components[0].data());
}

TEST_CASE("physics mode requires the ground truth") {
  const Grid g = Grid::make2d(6, 6);
  TimeSeries obs{g, 0.1, {ScalarField(g, 1.0), ScalarField(g, 1.0), ScalarField(g, 1.0)}};
  FitConfig cfg;
  cfg.n_in = 3;
  cfg.n_out = 3;
  cfg.mode = FitMode::PhysicsInformed;
  CHECK_THROWS_AS(fit(obs, cfg), ConfigError);
}
