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
#include <stdexcept>
#include <vector>

#include "divreg/grid.hpp"

namespace divreg {

class AbsentClassError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 2|A & B| / (|A| + |B|); 1 when the class is absent from both.
double dice(const LabelMap &a, const LabelMap &b, std::int32_t class_id);

/// Mean Dice over the non-zero classes present in either map (1 if none).
double mean_dice(const LabelMap &a, const LabelMap &b);

/// Boundary voxels of one class in physical coordinates (mm), row-major
/// with `rank` values per point.
struct SurfaceSet {
    int rank = 0;
    std::vector<double> coords;

    Index size() const { return rank == 0 ? 0 : static_cast<Index>(coords.size()) / rank; }
};

/// Class voxels with a face neighbour of another class or on the image border.
SurfaceSet extract_surface(const LabelMap &lab, std::int32_t class_id);

/// Average of the two mean nearest-surface distances (mm).
double asd(const LabelMap &a, const LabelMap &b, std::int32_t class_id);

/// Symmetric Hausdorff distance (mm). `percentile` < 100 replaces each
/// directed maximum by that percentile (linear interpolation).
double hausdorff(const LabelMap &a, const LabelMap &b, std::int32_t class_id, double percentile = 100.0);

/// Nearest distance from every point of `from` to the set `to`.
std::vector<double> directed_distances(const SurfaceSet &from, const SurfaceSet &to);

/// Means over the non-zero classes of the reference: Dice over all of them,
/// ASD and HD over those present in both maps (NaN if none).
struct LabelScores {
    double dice = 0.0;
    double asd = 0.0;
    double hd = 0.0;
};

LabelScores score_labels(const LabelMap &reference, const LabelMap &candidate, double hd_percentile = 100.0);

} // namespace divreg
