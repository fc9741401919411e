#include "adpde/fields.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adpde/error.hpp"

namespace adpde {

Grid::Grid(std::span<const std::size_t> shape, std::span<const double> spacing,
           Boundary boundary)
    : boundary_(boundary) {
  if (shape.size() < 1 || shape.size() > 3 || spacing.size() != shape.size()) {
    throw ConfigError("grid: ndim must be 1..3 with one spacing per axis");
  }
  ndim_ = static_cast<int>(shape.size());
  for (int k = 0; k < ndim_; ++k) {
    if (shape[k] < 3) {
      throw ConfigError("grid: every axis needs at least 3 cells");
    }
    if (!(spacing[k] > 0.0) || !std::isfinite(spacing[k])) {
      throw ConfigError("grid: spacing must be positive and finite");
    }
    shape_[k] = shape[k];
    spacing_[k] = spacing[k];
  }
  size_ = 1;
  for (int k = ndim_ - 1; k >= 0; --k) {
    stride_[k] = size_;
    size_ *= shape_[k];
  }
}

Grid Grid::make2d(std::size_t nx, std::size_t ny, double hx, double hy,
                  Boundary boundary) {
  const std::array<std::size_t, 2> s{nx, ny};
  const std::array<double, 2> h{hx, hy};
  return Grid(s, h, boundary);
}

Grid Grid::make3d(std::size_t nx, std::size_t ny, std::size_t nz, double h,
                  Boundary boundary) {
  const std::array<std::size_t, 3> s{nx, ny, nz};
  const std::array<double, 3> hh{h, h, h};
  return Grid(s, hh, boundary);
}

double Grid::cell_volume() const {
  double v = 1.0;
  for (int k = 0; k < ndim_; ++k) v *= spacing_[k];
  return v;
}

std::array<std::size_t, 3> Grid::unravel(std::size_t flat) const {
  std::array<std::size_t, 3> idx{0, 0, 0};
  for (int k = 0; k < ndim_; ++k) {
    idx[k] = flat / stride_[k];
    flat -= idx[k] * stride_[k];
  }
  return idx;
}

std::size_t Grid::ravel(const std::array<std::size_t, 3>& idx) const {
  std::size_t flat = 0;
  for (int k = 0; k < ndim_; ++k) flat += idx[k] * stride_[k];
  return flat;
}

bool Grid::interior(std::size_t flat) const {
  const auto idx = unravel(flat);
  for (int k = 0; k < ndim_; ++k) {
    if (idx[k] == 0 || idx[k] + 1 == shape_[k]) return false;
  }
  return true;
}

Grid Grid::with_boundary(Boundary b) const {
  Grid g = *this;
  g.boundary_ = b;
  return g;
}

bool Grid::same_geometry(const Grid& other) const {
  if (ndim_ != other.ndim_) return false;
  for (int k = 0; k < ndim_; ++k) {
    if (shape_[k] != other.shape_[k] || spacing_[k] != other.spacing_[k]) {
      return false;
    }
  }
  return true;
}

bool Grid::operator==(const Grid& other) const {
  return same_geometry(other) && boundary_ == other.boundary_;
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_geometry(b)) {
    throw ConfigError(std::string(what) + ": grid mismatch");
  }
}

ScalarField::ScalarField(const Grid& grid, double fill)
    : grid_(grid), values_(grid.size(), fill) {}

ScalarField::ScalarField(const Grid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw ConfigError("scalar field: value count does not match grid");
  }
  if (!all_finite()) {
    throw ConfigError("scalar field: non-finite sample");
  }
}

double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool ScalarField::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

VectorField::VectorField(const Grid& grid) : grid_(grid) {
  comps_.assign(grid.ndim(), ScalarField(grid));
}

VectorField::VectorField(std::vector<ScalarField> components)
    : comps_(std::move(components)) {
  if (comps_.empty()) throw ConfigError("vector field: no components");
  grid_ = comps_.front().grid();
  if (static_cast<int>(comps_.size()) != grid_.ndim()) {
    throw ConfigError("vector field: component count must equal ndim");
  }
  for (const auto& c : comps_) require_same_grid(grid_, c.grid(), "vector field");
}

TensorField::TensorField(const Grid& grid) : grid_(grid) {
  entries_.assign(entry_count(grid.ndim()), ScalarField(grid));
}

int TensorField::entry_index(int d, int row, int col) {
  if (row > col) std::swap(row, col);
  // Offset of row r in the packed upper triangle is r*d - r(r-1)/2.
  return row * d - row * (row - 1) / 2 + (col - row);
}

}  // namespace adpde
