/*
 * Copyright 2026 The divreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "divreg/grid.hpp"
#include "divreg/tape.hpp"

namespace divreg {

/// Cubic B-spline control lattice. Control point j along axis a sits at
/// physical position (j - 1) * control_spacing_mm[a], so the lattice carries a
/// one-cell margin before the image origin and at least two after its end.
/// Displacements are stored in mm with layout (component, control dims...).
struct FfdGrid {
    Spacing control_spacing_mm;
    Shape control_dims;
    std::vector<double> control_disp;

    int rank() const { return static_cast<int>(control_dims.size()); }
    Index points() const { return shape_size(control_dims); }

    /// Zero lattice just large enough for an image of `dims` with `voxel_spacing`.
    static FfdGrid covering(const Shape &dims, const Spacing &voxel_spacing, const Spacing &control_spacing_mm);
};

/// Lattice extent needed along one axis.
Index ffd_lattice_extent(Index dim, double voxel_spacing, double control_spacing_mm);

/// Uniform cubic B-spline basis functions B0..B3 at fractional offset t.
void bspline_basis(double t, double out[4]);

/// Dense field of the FFD at every voxel, converted to voxel units.
/// Throws std::invalid_argument when the lattice does not cover the image.
DisplacementField ffd_to_dvf(const FfdGrid &grid, const Shape &dims, const Spacing &spacing);

/// Every control displacement component drawn i.i.d. from Normal(0, sigma_mm^2).
FfdGrid sample_random_ffd(const Spacing &control_spacing_mm, double sigma_mm, const Shape &dims,
                          const Spacing &voxel_spacing, std::uint64_t seed);

/// Rigid shift in voxels (fractional allowed).
struct Translation {
    std::vector<double> offset;

    DisplacementField to_field(const Shape &dims, const Spacing &spacing) const;
};

/// Linear interpolation of `img` at p + u(p), edge-clamped.
Image warp_image(const Image &img, const DisplacementField &field);
/// Nearest-neighbour resampling with the same convention; never invents ids.
LabelMap warp_label(const LabelMap &lab, const DisplacementField &field);
/// (outer o inner)(p) = inner(p) + outer(p + inner(p)), outer interpolated linearly.
DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner);
/// Approximate inverse by fixed-point iteration v(p) = -u(p + v(p)).
DisplacementField invert_field(const DisplacementField &field, int iterations = 20);
Image translate_image(const Image &img, std::span<const double> offset);

namespace ops {

/// Differentiable pull warp. img: (N, C, S...), field: (N, rank, S...) in
/// voxel units; linear interpolation with clamp-to-edge. Differentiable in
/// both operands.
template <typename T>
Var<T> warp(const Var<T> &img, const Var<T> &field);

/// Differentiable FFD evaluation. ctrl: (1, rank, control dims...) holding
/// displacements in voxel units; returns (1, rank, dims...).
template <typename T>
Var<T> ffd_dense(const Var<T> &ctrl, const Shape &dims, const Spacing &voxel_spacing, const Spacing &control_spacing_mm);

/// Diffusion regulariser: (1/rank) * sum over difference axes of the mean over
/// positions of the squared forward difference summed over components.
/// Zero iff the field is constant along every axis.
template <typename T>
Var<T> smoothness_penalty(const Var<T> &field);

} // namespace ops

} // namespace divreg
