#pragma once

#include <array>
#include <cmath>

namespace adpde {

/// Dense d x d matrix with d <= 3, row-major.
struct Mat {
  int d = 0;
  std::array<double, 9> a{};

  Mat() = default;
  explicit Mat(int dim) : d(dim) {}

  static Mat identity(int dim) {
    Mat m(dim);
    for (int i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(int r, int c) { return a[r * 3 + c]; }
  double operator()(int r, int c) const { return a[r * 3 + c]; }

  Mat transposed() const {
    Mat t(d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  double frobenius() const {
    double s = 0.0;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) s += (*this)(r, c) * (*this)(r, c);
    return std::sqrt(s);
  }

  double trace() const {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (*this)(i, i);
    return s;
  }

  double det() const {
    const Mat& m = *this;
    if (d == 1) return m(0, 0);
    if (d == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
           m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
           m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
  }
};

inline Mat operator*(const Mat& x, const Mat& y) {
  Mat r(x.d);
  for (int i = 0; i < x.d; ++i)
    for (int j = 0; j < x.d; ++j) {
      double s = 0.0;
      for (int k = 0; k < x.d; ++k) s += x(i, k) * y(k, j);
      r(i, j) = s;
    }
  return r;
}

inline Mat operator+(const Mat& x, const Mat& y) {
  Mat r(x.d);
  for (int i = 0; i < 9; ++i) r.a[i] = x.a[i] + y.a[i];
  return r;
}

inline Mat operator-(const Mat& x, const Mat& y) {
  Mat r(x.d);
  for (int i = 0; i < 9; ++i) r.a[i] = x.a[i] - y.a[i];
  return r;
}

inline Mat operator*(double s, const Mat& x) {
  Mat r(x.d);
  for (int i = 0; i < 9; ++i) r.a[i] = s * x.a[i];
  return r;
}

/// Eigenvalues of a symmetric matrix in ascending order (closed form).
std::array<double, 3> symmetric_eigenvalues(const Mat& m);

}  // namespace adpde
