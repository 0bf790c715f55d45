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

#include <stdexcept>
#include <string>

#include "divreg/grid.hpp"

namespace divreg {

class DegenerateInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class NormalizeMode { minmax, zscore };

/// minmax maps [min, max] to [0, 1]; zscore gives mean 0 and population std 1.
/// Throws DegenerateInputError for constant images.
Image normalize_intensity(const Image &img, NormalizeMode mode = NormalizeMode::minmax);

enum class ModalityMap { identity, invert, nonmono };

/// Voxel-wise intensity lookup standing in for a second modality.
///   identity: x
///   invert:   1 - x
///   nonmono:  1 - 2x on [0, 0.5), 2x - 1 on [0.5, 1]   (V-shaped, not injective)
/// Intensities must lie in [0, 1].
Image modality_remap(const Image &img, ModalityMap mapping);
float remap_value(float x, ModalityMap mapping);

NormalizeMode parse_normalize_mode(const std::string &s);
ModalityMap parse_modality_map(const std::string &s);
std::string to_string(ModalityMap m);

} // namespace divreg
