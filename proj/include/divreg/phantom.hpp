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
#include <string>

#include "json.hpp"

#include "divreg/grid.hpp"
#include "divreg/intensity.hpp"

namespace divreg {

enum class BasePattern { shapes, gradient_rings };

BasePattern parse_base_pattern(const std::string &s);
std::string to_string(BasePattern p);

struct PhantomConfig {
    BasePattern base_pattern = BasePattern::shapes;
    Shape dims{64, 64};
    Spacing spacing{1.0, 1.0};
    double ffd_spacing_mm = 20.0;
    double ffd_sigma_mm = 6.0;
    ModalityMap modality_map = ModalityMap::identity;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;
    /// Seed of the undeformed anatomy; defaults to `seed`. Sharing it across
    /// pairs gives an atlas-style dataset with one template.
    std::optional<std::uint64_t> pattern_seed;

    void validate() const;
    nlohmann::json to_json() const;
    static PhantomConfig from_json(const nlohmann::json &j);
};

struct LabeledImage {
    Image image;
    LabelMap labels;
};

/// Noise-free template with intensities in [0, 1] and classes 0..3.
LabeledImage render_base(BasePattern pattern, const Shape &dims, const Spacing &spacing, std::uint64_t pattern_seed);

struct PhantomPair {
    Image fixed;
    Image moving;
    LabelMap fixed_labels;
    LabelMap moving_labels;
    /// Field of the sampled deformation: moving(x) = remap(base)(x + truth(x)).
    DisplacementField truth;
};

/// fixed = base + noise; moving = warp(remap(base), truth) + noise, both
/// clipped to [0, 1].
PhantomPair gen_phantom_pair(const PhantomConfig &cfg);

} // namespace divreg
