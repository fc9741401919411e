#pragma once

#include <span>

#include "adpde/fields.hpp"

namespace adpde {

/// Centred second-order differences in the interior, one-sided second-order
/// differences on the first and last cell of each axis.
VectorField gradient(const ScalarField& f);

/// Sum of per-axis derivatives of the components, same stencils as gradient.
ScalarField divergence(const VectorField& F);

/// 2D curl of the scalar potential: (dP/dy, -dP/dx).
VectorField curl(const ScalarField& P);
/// 3D curl of a 3-component potential.
VectorField curl(const VectorField& P);

/// Discrete div(D grad C).
///
/// CauchyPatch grids use the plain chain divergence(D * gradient(C)).
/// NeumannZeroFlux grids reflect C across each face (zero normal gradient on
/// boundary cells) and drop the normal flux on boundary cells before the
/// centred divergence, which makes the operator symmetric negative
/// semi-definite and the cell sum of its output exactly zero.
ScalarField laplacian_tensor(const ScalarField& C, const TensorField& D);

namespace stencil {

enum class Kind {
  OneSided,        ///< centred interior, one-sided 2nd order at the ends
  ReflectedGrad,   ///< centred interior, zero on the first/last cell
  ZeroFluxDiv,     ///< centred, end samples (and ghosts) treated as zero
};

/// out (+)= d/dx_axis f with the given end treatment.
void axis_diff(const Grid& g, int axis, Kind kind, std::span<const double> f,
               std::span<double> out, bool accumulate = false);

/// Transpose of axis_diff: out (+)= A^T w.
void axis_diff_transpose(const Grid& g, int axis, Kind kind,
                         std::span<const double> w, std::span<double> out,
                         bool accumulate = false);

/// Curl of a potential given as alpha flat component blocks (alpha = 1 in
/// 2D, 3 in 3D); out receives ndim flat blocks.
void curl_flat(const Grid& g, std::span<const double> potential,
               std::span<double> out);
/// Transpose of curl_flat, accumulated into out.
void curl_transpose_flat(const Grid& g, std::span<const double> w,
                         std::span<double> out);

/// Number of potential components for a grid: 1 in 2D, 3 in 3D.
int potential_components(const Grid& g);

}  // namespace stencil
}  // namespace adpde
