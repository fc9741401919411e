#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace adpde {

enum class Boundary {
  NeumannZeroFlux,  ///< zero normal flux through the domain faces
  CauchyPatch,      ///< boundary cells driven by observed values
};

/// Rectilinear, cell-centred grid. Axis 0 is x, row-major storage with the
/// last axis fastest. Cell i along axis k sits at coordinate i * spacing[k].
class Grid {
 public:
  Grid() = default;
  Grid(std::span<const std::size_t> shape, std::span<const double> spacing,
       Boundary boundary = Boundary::NeumannZeroFlux);

  static Grid make2d(std::size_t nx, std::size_t ny, double hx = 1.0,
                     double hy = 1.0,
                     Boundary boundary = Boundary::NeumannZeroFlux);
  static Grid make3d(std::size_t nx, std::size_t ny, std::size_t nz,
                     double h = 1.0,
                     Boundary boundary = Boundary::NeumannZeroFlux);

  int ndim() const { return ndim_; }
  std::size_t shape(int axis) const { return shape_[axis]; }
  double spacing(int axis) const { return spacing_[axis]; }
  Boundary boundary() const { return boundary_; }
  std::size_t size() const { return size_; }
  std::size_t stride(int axis) const { return stride_[axis]; }
  double cell_volume() const;

  /// Per-axis indices of a flat cell index.
  std::array<std::size_t, 3> unravel(std::size_t flat) const;
  std::size_t ravel(const std::array<std::size_t, 3>& idx) const;
  double coord(int axis, std::size_t i) const { return spacing_[axis] * i; }
  /// True when the cell touches no domain face.
  bool interior(std::size_t flat) const;

  Grid with_boundary(Boundary b) const;

  /// Same dimensionality, shape and spacing (the boundary kind is a solver
  /// setting and does not take part).
  bool same_geometry(const Grid& other) const;
  bool operator==(const Grid& other) const;

 private:
  int ndim_ = 0;
  std::array<std::size_t, 3> shape_{1, 1, 1};
  std::array<double, 3> spacing_{1.0, 1.0, 1.0};
  std::array<std::size_t, 3> stride_{0, 0, 0};
  std::size_t size_ = 0;
  Boundary boundary_ = Boundary::NeumannZeroFlux;
};

/// One real sample per cell.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(const Grid& grid, double fill = 0.0);
  /// Throws ConfigError on a size mismatch or non-finite sample.
  ScalarField(const Grid& grid, std::vector<double> values);

  const Grid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double max_abs() const;
  bool all_finite() const;

 private:
  Grid grid_;
  std::vector<double> values_;
};

/// grid.ndim() components sharing one grid.
class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(const Grid& grid);
  explicit VectorField(std::vector<ScalarField> components);

  const Grid& grid() const { return grid_; }
  int ncomp() const { return static_cast<int>(comps_.size()); }
  const ScalarField& operator[](int c) const { return comps_[c]; }
  ScalarField& operator[](int c) { return comps_[c]; }

 private:
  Grid grid_;
  std::vector<ScalarField> comps_;
};

/// Symmetric d x d tensor per cell, stored as the d(d+1)/2 upper-triangle
/// entries in row order: (0,0),(0,1),(0,2),(1,1),(1,2),(2,2).
class TensorField {
 public:
  TensorField() = default;
  explicit TensorField(const Grid& grid);

  static int entry_count(int d) { return d * (d + 1) / 2; }
  static int entry_index(int d, int row, int col);

  const Grid& grid() const { return grid_; }
  int dim() const { return grid_.ndim(); }
  int nentries() const { return static_cast<int>(entries_.size()); }
  const ScalarField& entry(int e) const { return entries_[e]; }
  ScalarField& entry(int e) { return entries_[e]; }
  double operator()(std::size_t cell, int row, int col) const {
    return entries_[entry_index(dim(), row, col)][cell];
  }
  void set(std::size_t cell, int row, int col, double v) {
    entries_[entry_index(dim(), row, col)][cell] = v;
  }

 private:
  Grid grid_;
  std::vector<ScalarField> entries_;
};

/// Throws ConfigError unless both grids share geometry.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

}  // namespace adpde
