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

#include <filesystem>
#include <stdexcept>

#include "divreg/grid.hpp"

// MetaImage (.mha with ElementDataFile = LOCAL, or .mhd + detached raw).
// DimSize and ElementSpacing are written fastest axis first as the format
// requires; in memory, axes are slowest first.
namespace divreg {

class MetaImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Header fails to parse.
class MetaParseError : public MetaImageError {
public:
    using MetaImageError::MetaImageError;
};

/// NDims outside {2, 3}.
class MetaDimensionError : public MetaImageError {
public:
    using MetaImageError::MetaImageError;
};

/// Payload length disagrees with the header.
class MetaSizeError : public MetaImageError {
public:
    using MetaImageError::MetaImageError;
};

/// Accepts MET_FLOAT, MET_DOUBLE and MET_SHORT; converts to float.
Image load_image(const std::filesystem::path &path);
/// Writes a little-endian MET_FLOAT payload inline.
void save_image(const Image &img, const std::filesystem::path &path);

/// Stored as MET_SHORT; ids above 32767 are rejected on save.
LabelMap load_labels(const std::filesystem::path &path);
void save_labels(const LabelMap &lab, const std::filesystem::path &path);

/// Multi-channel MET_DOUBLE, one channel per axis with components ordered
/// fastest axis first (x, y, z) and voxel units.
DisplacementField load_field(const std::filesystem::path &path);
void save_field(const DisplacementField &field, const std::filesystem::path &path);

} // namespace divreg
