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

#include "json.hpp"

#include "divreg/params.hpp"

namespace divreg {

namespace ops {

/// Normalisation with learned convex mixtures of instance, layer and batch
/// statistics. x: (N, C, S...); gamma, beta: (C); mean_logits, var_logits: (3)
/// ordered (instance, layer, batch). Variances are population variances.
template <typename T>
Var<T> switchable_norm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta, const Var<T> &mean_logits,
                       const Var<T> &var_logits, double eps = 1e-5);

} // namespace ops

/// Channel gate sigmoid(W2 relu(W1 gap(x) + b1) + b2) applied to x.
/// Expects "<prefix>.w1", ".b1", ".w2", ".b2".
template <typename T>
Var<T> se_block(const BoundParams<T> &p, const std::string &prefix, const Var<T> &x);

struct RegNetConfig {
    int rank = 2;
    std::vector<Index> encoder_channels{16, 32, 32, 32};
    std::vector<Index> decoder_channels{32, 32, 32, 16};
    Index se_reduction = 8;
    Index kernel = 3;
    double leaky_slope = 0.2;

    void validate() const;
    /// Every spatial extent must divide by 2^levels.
    Index size_multiple() const { return Index{1} << encoder_channels.size(); }
    nlohmann::json to_json() const;
    static RegNetConfig from_json(const nlohmann::json &j);
};

/// Convolutions use a Kaiming-uniform draw, biases start at zero, norms at
/// identity (gamma 1, beta 0, uniform mixture) and the flow head at zero.
template <typename T>
ParamSet<T> init_regnet(const RegNetConfig &cfg, std::uint64_t seed);

/// Dense displacement (N, rank, S...) in voxel units for inputs (N, 1, S...).
template <typename T>
Var<T> regnet_forward(const BoundParams<T> &p, const RegNetConfig &cfg, const Var<T> &moving, const Var<T> &fixed);

} // namespace divreg
