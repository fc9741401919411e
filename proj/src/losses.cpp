#include "adpde/losses.hpp"

#include <cmath>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"

namespace adpde {
namespace {

// Squared Frobenius norm of the symmetric difference from stored entries,
// and the per-entry multiplicity (1 on the diagonal, 2 off it).
double entry_weight(int d, int e) {
  int idx = 0;
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c, ++idx)
      if (idx == e) return r == c ? 1.0 : 2.0;
  return 1.0;
}

double vec_term(const VectorField& t, const VectorField& p, std::size_t i,
                double inv_n, std::vector<double>* g) {
  const int d = t.ncomp();
  const std::size_t n = t.grid().size();
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    const double x = p[c][i] - t[c][i];
    s += x * x;
  }
  const double norm = std::sqrt(s);
  if (g && norm > 0.0) {
    for (int c = 0; c < d; ++c) {
      (*g)[c * n + i] += inv_n * (p[c][i] - t[c][i]) / norm;
    }
  }
  return norm;
}

double tensor_term(const TensorField& t, const TensorField& p, std::size_t i,
                   double inv_n, std::vector<double>* g) {
  const int d = t.dim();
  const std::size_t n = t.grid().size();
  double s = 0.0;
  for (int e = 0; e < t.nentries(); ++e) {
    const double x = p.entry(e)[i] - t.entry(e)[i];
    s += entry_weight(d, e) * x * x;
  }
  const double norm = std::sqrt(s);
  if (g && norm > 0.0) {
    for (int e = 0; e < t.nentries(); ++e) {
      const double x = p.entry(e)[i] - t.entry(e)[i];
      (*g)[e * n + i] += inv_n * entry_weight(d, e) * x / norm;
    }
  }
  return norm;
}

void check_orthonormal(const Mat& u) {
  const Mat r = u.transposed() * u - Mat::identity(u.d);
  if (r.frobenius() > 1e-8) {
    throw ConfigError("loss_ul: eigenvector frame is not orthonormal");
  }
}

}  // namespace

double loss_vd(const DerivedFields& truth, const DerivedFields& pred,
               VdGrad* grad) {
  const Grid& g = truth.a.grid();
  require_same_grid(g, pred.a.grid(), "loss_vd");
  const std::size_t n = g.size();
  const int d = g.ndim();
  const int ne = TensorField::entry_count(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->v_bar.assign(d * n, 0.0);
    grad->v.assign(d * n, 0.0);
    grad->d_bar.assign(ne * n, 0.0);
    grad->d.assign(ne * n, 0.0);
    grad->a.assign(n, 0.0);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = vec_term(truth.v_bar, pred.v_bar, i, inv_n,
                        grad ? &grad->v_bar : nullptr);
    s += vec_term(truth.v, pred.v, i, inv_n, grad ? &grad->v : nullptr);
    s += tensor_term(truth.d_bar, pred.d_bar, i, inv_n,
                     grad ? &grad->d_bar : nullptr);
    s += tensor_term(truth.d, pred.d, i, inv_n, grad ? &grad->d : nullptr);
    const double da = pred.a[i] - truth.a[i];
    s += std::abs(da);
    if (grad && da != 0.0) grad->a[i] += inv_n * (da > 0.0 ? 1.0 : -1.0);
    total += s;
  }
  return total * inv_n;
}

double loss_ul(std::span<const Mat> truth_u,
               std::span<const std::array<double, 3>> truth_lam,
               std::span<const Mat> pred_u,
               std::span<const std::array<double, 3>> pred_lam, int d,
               UlGrad* grad) {
  const std::size_t n = truth_u.size();
  if (pred_u.size() != n || truth_lam.size() != n || pred_lam.size() != n) {
    throw ConfigError("loss_ul: cell count mismatch");
  }
  if (n == 0) throw ConfigError("loss_ul: empty input");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->u.assign(n, Mat(d));
    grad->lam.assign(d * n, 0.0);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Mat& u = truth_u[i];
    const Mat& p = pred_u[i];
    check_orthonormal(u);
    check_orthonormal(p);
    double s = 0.0;
    for (int col = 0; col < d; ++col) {
      double plus = 0.0, minus = 0.0;
      for (int r = 0; r < d; ++r) {
        plus += (u(r, col) + p(r, col)) * (u(r, col) + p(r, col));
        minus += (u(r, col) - p(r, col)) * (u(r, col) - p(r, col));
      }
      plus = std::sqrt(plus);
      minus = std::sqrt(minus);
      const bool use_plus = plus < minus;
      const double m = use_plus ? plus : minus;
      s += m;
      if (grad && m > 0.0) {
        for (int r = 0; r < d; ++r) {
          const double diff = use_plus ? p(r, col) + u(r, col) : p(r, col) - u(r, col);
          grad->u[i](r, col) += inv_n * diff / m;
        }
      }
    }
    double l2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double x = pred_lam[i][k] - truth_lam[i][k];
      l2 += x * x;
    }
    const double ln = std::sqrt(l2);
    s += ln;
    if (grad && ln > 0.0) {
      for (int k = 0; k < d; ++k) {
        grad->lam[k * n + i] += inv_n * (pred_lam[i][k] - truth_lam[i][k]) / ln;
      }
    }
    total += s;
  }
  return total * inv_n;
}

double loss_sigma(const ScalarField& a_truth, const ScalarField& sigma_hat,
                  std::vector<double>* grad) {
  require_same_grid(a_truth.grid(), sigma_hat.grid(), "loss_sigma");
  const std::size_t n = a_truth.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) grad->assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (1.0 - a_truth[i]) - sigma_hat[i];
    total += r * r;
    if (grad) (*grad)[i] = -2.0 * r * inv_n;
  }
  return total * inv_n;
}

double loss_cc(const TimeSeries& observed, const TimeSeries& predicted) {
  if (observed.size() != predicted.size() || observed.size() == 0) {
    throw ConfigError("loss_cc: frame count mismatch");
  }
  require_same_grid(observed.grid, predicted.grid, "loss_cc");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t f = 0; f < observed.size(); ++f) {
    const auto& a = observed.frames[f];
    const auto& b = predicted.frames[f];
    require_same_grid(a.grid(), b.grid(), "loss_cc");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double r = b[i] - a[i];
      total += r * r;
    }
    count += a.size();
  }
  return total / static_cast<double>(count);
}

double loss_ss(const VectorField& v, const TensorField& d,
               std::vector<double>* grad_v, std::vector<double>* grad_d) {
  const Grid& g = v.grid();
  require_same_grid(g, d.grid(), "loss_ss");
  const int dim = g.ndim();
  const std::size_t n = g.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> dk(n);
  auto component = [&](std::span<const double> f, double* gout) {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) {
      stencil::axis_diff(g, k, stencil::Kind::OneSided, f, dk);
      for (double x : dk) s += x * x;
      if (gout) {
        for (double& x : dk) x *= 2.0 * inv_n;
        stencil::axis_diff_transpose(g, k, stencil::Kind::OneSided, dk,
                                     std::span<double>(gout, n), true);
      }
    }
    return s;
  };
  if (grad_v) grad_v->assign(dim * n, 0.0);
  if (grad_d) grad_d->assign(d.nentries() * n, 0.0);
  double total = 0.0;
  for (int c = 0; c < dim; ++c) {
    total += component(v[c].values(), grad_v ? grad_v->data() + c * n : nullptr);
  }
  for (int e = 0; e < d.nentries(); ++e) {
    total += component(d.entry(e).values(),
                       grad_d ? grad_d->data() + e * n : nullptr);
  }
  return total * inv_n;
}

TotalLoss total_loss(FitMode mode, const LossPieces& p, const LossWeights& w) {
  TotalLoss out;
  if (mode == FitMode::PhysicsInformed) {
    if (!p.vd || !p.ul) {
      throw ConfigError("total_loss: physics mode needs vd and ul pieces");
    }
    out.value = *p.vd + w.w_ul * *p.ul;
    return out;
  }
  if (!p.cc || !p.ss) {
    throw ConfigError("total_loss: transport mode needs cc and ss pieces");
  }
  out.value = *p.cc + w.w_ss * *p.ss;
  if (p.sigma) {
    out.value += w.w_sigma * *p.sigma;
    out.sigma_active = true;
  }
  return out;
}

}  // namespace adpde
