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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "divreg/grid.hpp"
#include "divreg/kldivnet.hpp"
#include "divreg/similarity.hpp"

namespace divreg {

/// Neural metric protocol: one warm-up on random translations of the pair,
/// then a fixed fine-tuning budget per offset starting from the warm-up
/// weights. The reported value is S under the averaged weights, averaged
/// over `eval_shuffles` shuffles.
struct DvLandscapeConfig {
    KldivNetConfig net;
    double lr = 1e-3;
    Index warmup_steps = 500;
    Index steps_per_offset = 100;
    double ema_decay = 0.9;
    Index eval_shuffles = 8;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static DvLandscapeConfig from_json(const nlohmann::json &j);
};

struct LandscapeConfig {
    Index max_offset = 10;
    Index step = 2;
    /// Any of "ssd", "lncc", "mi", "dv", "dice" (dice needs labels).
    std::vector<std::string> metrics{"ssd", "lncc", "mi", "dv"};
    Index lncc_window = kDefaultLnccWindow;
    int mi_bins = 64;
    double mi_sigma_bins = kDefaultMiSigmaBins;
    DvLandscapeConfig dv;

    nlohmann::json to_json() const;
    static LandscapeConfig from_json(const nlohmann::json &j);
};

struct LandscapeRow {
    double dx = 0.0;  // shift along the last axis
    double dy = 0.0;  // shift along the second-to-last axis
    std::string metric;
    double value = 0.0;
};

struct LandscapeTable {
    std::vector<double> offsets;
    std::vector<LandscapeRow> rows;
    nlohmann::json meta;

    /// Offset with the best value: minimum for "ssd", maximum otherwise.
    std::pair<double, double> best_offset(const std::string &metric) const;
    void write_csv(const std::filesystem::path &path) const;
    /// Whitespace-separated matrix (rows: dy, columns: dx) for contour tools.
    void write_matrix(const std::filesystem::path &path, const std::string &metric) const;
};

/// Evaluates every metric on (translate(moving, (dy, dx)), fixed) over the
/// square grid of offsets. Requires a 2-D pair; offsets may not exceed a
/// quarter of the smaller extent.
LandscapeTable landscape(const Image &fixed, const Image &moving, const LandscapeConfig &cfg,
                         const LabelMap *fixed_labels = nullptr, const LabelMap *moving_labels = nullptr);

} // namespace divreg
