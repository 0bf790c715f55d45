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
#include <optional>
#include <span>

#include "divreg/grid.hpp"

namespace divreg {

struct AugmentConfig {
    /// Largest translation per axis as a fraction of that axis' extent.
    double max_translation = 0.05;
    /// Largest in-plane rotation (degrees) about the image centre, applied in
    /// the plane of the last two axes.
    double max_rotation_deg = 10.0;
};

struct AugmentInput {
    Image image;
    std::optional<LabelMap> labels;
};

/// Field of a rigid motion: out(p) = in(R(p - c) + c + t).
DisplacementField rigid_field(const Shape &dims, const Spacing &spacing, double angle_rad, std::span<const double> shift);

/// Independent random rigid motion of each input; images use linear and
/// labels nearest-neighbour resampling. Deterministic per seed.
void augment_pair(AugmentInput &fixed, AugmentInput &moving, std::uint64_t seed, const AugmentConfig &cfg = {});

} // namespace divreg
