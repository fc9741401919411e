#include "adpde/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adpde/error.hpp"

namespace adpde {
namespace {

double domain_extent(const Grid& g, int k) {
  return g.spacing(k) * static_cast<double>(g.shape(k) - 1);
}

ScalarField uniform_field(const Grid& g, CounterRng& rng, double lo, double hi) {
  ScalarField f(g);
  for (double& x : f.data()) x = rng.uniform(lo, hi);
  return f;
}

}  // namespace

SimProtocol SimProtocol::gaussian2d(std::uint64_t seed) {
  SimProtocol p;
  p.grid = Grid::make2d(64, 64, 1.0, 1.0);
  p.seed = seed;
  return p;
}

SimProtocol SimProtocol::gaussian3d(std::uint64_t seed) {
  SimProtocol p;
  p.grid = Grid::make3d(32, 32, 32, 1.0);
  p.seed = seed;
  return p;
}

void SimProtocol::validate() const {
  if (grid.ndim() != 2 && grid.ndim() != 3) {
    throw ConfigError("protocol: grid must be 2D or 3D");
  }
  if (n_frames < 2) throw ConfigError("protocol: need at least 2 frames");
  if (!(dt > 0.0)) throw ConfigError("protocol: dt must be positive");
  if (!(lambda_lo >= 0.0 && lambda_hi > lambda_lo)) {
    throw ConfigError("protocol: lambda range must be non-negative and non-degenerate");
  }
  if (!(psi_hi > psi_lo)) throw ConfigError("protocol: psi range is degenerate");
  if (!(anomaly_prob >= 0.0 && anomaly_prob <= 1.0)) {
    throw ConfigError("protocol: anomaly_prob must lie in [0, 1]");
  }
  if (!(init_std > 0.0)) throw ConfigError("protocol: init_std must be positive");
}

SolverConfig SimProtocol::solver_config(std::uint64_t noise_seed) const {
  SolverConfig cfg;
  cfg.dt = dt;
  cfg.form = form;
  cfg.stochastic = stochastic;
  cfg.seed = noise_seed;
  return cfg;
}

ScalarField gaussian_initial(const Grid& g, const std::array<double, 3>& center,
                             double std) {
  if (!(std > 0.0)) throw ConfigError("gaussian_initial: std must be positive");
  for (int k = 0; k < g.ndim(); ++k) {
    if (!(center[k] >= 0.0 && center[k] <= domain_extent(g, k))) {
      throw ConfigError("gaussian_initial: center outside the domain");
    }
  }
  ScalarField f(g);
  const double inv = 1.0 / (2.0 * std * std);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unravel(i);
    double r2 = 0.0;
    for (int k = 0; k < g.ndim(); ++k) {
      const double x = g.coord(k, idx[k]) - center[k];
      r2 += x * x;
    }
    f[i] = std::exp(-r2 * inv);
  }
  return f;
}

ScalarField box_smooth(const ScalarField& f) {
  const Grid& g = f.grid();
  std::vector<double> cur(f.values().begin(), f.values().end());
  std::vector<double> nxt(cur.size());
  for (int k = 0; k < g.ndim(); ++k) {
    const std::size_t st = g.stride(k);
    const std::size_t n = g.shape(k);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ik = (i / st) % n;
      double s = cur[i];
      int cnt = 1;
      if (ik > 0) {
        s += cur[i - st];
        ++cnt;
      }
      if (ik + 1 < n) {
        s += cur[i + st];
        ++cnt;
      }
      nxt[i] = s / cnt;
    }
    cur.swap(nxt);
  }
  return ScalarField(g, std::move(cur));
}

RandomPotentials random_potentials(const SimProtocol& p, CounterRng& rng) {
  p.validate();
  const Grid& g = p.grid;
  const int d = g.ndim();
  RandomPotentials out;
  out.psi = VelocityPotential::zeros(g);
  for (auto& comp : out.psi.components) {
    comp = box_smooth(uniform_field(g, rng, p.psi_lo, p.psi_hi));
  }
  for (int m = 0; m < d; ++m) {
    out.lambda.push_back(box_smooth(uniform_field(g, rng, p.lambda_lo, p.lambda_hi)));
  }
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (d == 2) {
    out.b.emplace_back(g, theta);
  } else {
    // Rotation by theta / 2 about a uniformly drawn axis.
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double w[3] = {rxy * std::cos(phi), rxy * std::sin(phi), z};
    // S01 = -w2, S02 = w1, S12 = -w0 for the cross-product matrix of w.
    const double ang = 0.5 * theta;
    out.b.emplace_back(g, -w[2] * ang);
    out.b.emplace_back(g, w[1] * ang);
    out.b.emplace_back(g, -w[0] * ang);
  }
  return out;
}

AnomalyField anomaly_field(const Grid& g, CounterRng& rng) {
  const int d = g.ndim();
  const double a0 = rng.uniform(0.3, 0.95);
  std::array<double, 3> c{}, s{};
  for (int k = 0; k < d; ++k) c[k] = rng.uniform(0.0, domain_extent(g, k));
  for (int k = 0; k < d; ++k) s[k] = rng.uniform(2.0, 16.0);
  ScalarField a(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unravel(i);
    double q = 0.0;
    for (int k = 0; k < d; ++k) {
      const double x = (g.coord(k, idx[k]) - c[k]) / s[k];
      q += x * x;
    }
    a[i] = std::clamp(1.0 - a0 * std::exp(-0.5 * q), kAnomalyFloor, 1.0);
  }
  return AnomalyField::checked(std::move(a));
}

SimSample make_sample(const SimProtocol& p, CounterRng& rng) {
  p.validate();
  const Grid& g = p.grid;
  auto pot = random_potentials(p, rng);
  SimSample s;
  s.has_anomaly = rng.uniform() < p.anomaly_prob;
  AnomalyField a = s.has_anomaly ? anomaly_field(g, rng) : AnomalyField::normal(g);
  ScalarField sigma(g);
  for (std::size_t i = 0; i < g.size(); ++i) sigma[i] = 1.0 - a.a[i];
  s.params = TransportParams{std::move(pot.psi),
                             DiffusionSpectralParams{std::move(pot.b),
                                                     std::move(pot.lambda)},
                             std::move(a), std::move(sigma)};
  std::array<double, 3> center{};
  for (int k = 0; k < g.ndim(); ++k) center[k] = rng.uniform(0.0, domain_extent(g, k));
  const ScalarField c0 = gaussian_initial(g, center, p.init_std);
  const std::uint64_t noise_seed = rng.next_u64();
  s.series = integrate(c0, s.params, p.solver_config(noise_seed), p.n_frames);
  return s;
}

SimSample make_sample(const SimProtocol& p, std::uint32_t index) {
  CounterRng rng(p.seed, index);
  return make_sample(p, rng);
}

}  // namespace adpde
