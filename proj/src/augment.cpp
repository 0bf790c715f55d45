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

#include "divreg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "divreg/transform.hpp"

namespace divreg {

DisplacementField rigid_field(const Shape &dims, const Spacing &spacing, double angle_rad, std::span<const double> shift) {
    const int rank = static_cast<int>(dims.size());
    DisplacementField f = DisplacementField::zeros(dims, spacing);
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    const int ay = rank - 2, ax = rank - 1;
    for (Index v = 0; v < f.voxels(); ++v) {
        const auto p = unravel(v, dims);
        for (int a = 0; a < rank; ++a) f.component(a, v) = shift[static_cast<std::size_t>(a)];
        if (rank >= 2) {
            const double cy = 0.5 * static_cast<double>(dims[static_cast<std::size_t>(ay)] - 1);
            const double cx = 0.5 * static_cast<double>(dims[static_cast<std::size_t>(ax)] - 1);
            const double y = static_cast<double>(p[static_cast<std::size_t>(ay)]) - cy;
            const double x = static_cast<double>(p[static_cast<std::size_t>(ax)]) - cx;
            f.component(ay, v) += c * y - s * x - y;
            f.component(ax, v) += s * y + c * x - x;
        }
    }
    return f;
}

namespace {

void apply_random_rigid(AugmentInput &in, std::mt19937_64 &rng, const AugmentConfig &cfg) {
    const Shape &dims = in.image.dims();
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> shift(dims.size());
    for (std::size_t a = 0; a < dims.size(); ++a) shift[a] = unit(rng) * cfg.max_translation * static_cast<double>(dims[a]);
    const double angle = unit(rng) * cfg.max_rotation_deg * std::numbers::pi / 180.0;
    if (angle == 0.0 && std::all_of(shift.begin(), shift.end(), [](double x) { return x == 0.0; })) return;
    const DisplacementField f = rigid_field(dims, in.image.spacing(), angle, shift);
    in.image = warp_image(in.image, f);
    if (in.labels) in.labels = warp_label(*in.labels, f);
}

} // namespace

void augment_pair(AugmentInput &fixed, AugmentInput &moving, std::uint64_t seed, const AugmentConfig &cfg) {
    std::mt19937_64 rng(seed);
    apply_random_rigid(fixed, rng, cfg);
    apply_random_rigid(moving, rng, cfg);
}

} // namespace divreg
