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
#include <string>
#include <vector>

#include "divreg/grid.hpp"
#include "divreg/kldivnet.hpp"
#include "divreg/similarity.hpp"

namespace divreg {

enum class Metric { ssd, lncc, mi, dv };
enum class TransformModel { ffd, dvf };

Metric parse_metric(const std::string &s);
std::string to_string(Metric m);
TransformModel parse_transform_model(const std::string &s);

struct RegisterConfig {
    Metric metric = Metric::ssd;
    TransformModel model = TransformModel::dvf;
    Index iterations = 200;
    /// Adam step on the transform parameters (voxels).
    double lr = 0.05;
    double smooth_weight = 0.0;
    double control_spacing_mm = 20.0;
    Index lncc_window = kDefaultLnccWindow;
    int mi_bins = kDefaultMiBins;
    double mi_sigma_bins = kDefaultMiSigmaBins;
    KldivNetConfig dv_net;
    double dv_lr = 1e-3;
    std::uint64_t seed = 0;
};

struct RegisterResult {
    DisplacementField field;
    /// Similarity (larger is better; SSD is negated) before each step and
    /// after the final one.
    std::vector<double> history;
};

/// Gradient ascent on the similarity over a dense field or FFD control
/// displacements, both starting at zero. For the neural metric, the critic
/// and the transform take one step each per iteration on the same objective.
RegisterResult iterative_register(const Image &fixed, const Image &moving, const RegisterConfig &cfg);

} // namespace divreg
