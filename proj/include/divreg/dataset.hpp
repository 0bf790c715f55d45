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
#include <optional>
#include <string>
#include <vector>

#include "divreg/grid.hpp"

namespace divreg {

/// One registration case. Labels and the ground-truth field are optional.
struct PairRecord {
    std::string id;
    Image fixed;
    Image moving;
    std::optional<LabelMap> fixed_labels;
    std::optional<LabelMap> moving_labels;
    std::optional<DisplacementField> truth;
};

struct SplitCounts {
    Index train = 0;
    Index val = 0;
    Index test = 0;
};

/// Largest-remainder apportionment of n cases to three non-negative ratios.
/// The counts always sum to n. Throws std::invalid_argument for bad ratios.
SplitCounts split_counts(Index n, double train, double val, double test);

/// Files: fixed.mha, moving.mha, fixed_labels.mha, moving_labels.mha,
/// truth_field.mha inside `dir`.
void write_pair(const std::filesystem::path &dir, const PairRecord &pair);
PairRecord read_pair(const std::filesystem::path &dir);

/// Sorted case directories of root/<split>.
std::vector<std::filesystem::path> list_pairs(const std::filesystem::path &root, const std::string &split);
std::vector<PairRecord> load_split(const std::filesystem::path &root, const std::string &split);

} // namespace divreg
