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

#include "divreg/params.hpp"

namespace divreg {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment accumulators, created lazily on the first step.
template <typename T>
struct AdamState {
    ParamSet<T> m;
    ParamSet<T> v;
    std::int64_t step = 0;
};

/// Bias-corrected Adam update in place. Every parameter needs a gradient of
/// the same shape; throws ShapeError otherwise.
template <typename T>
void adam_step(ParamSet<T> &params, const ParamSet<T> &grads, AdamState<T> &state, const AdamConfig &cfg = {});

/// ema <- decay * ema + (1 - decay) * params. An empty `ema` is initialised to
/// a copy of `params`. decay must lie in [0, 1).
template <typename T>
void ema_update(ParamSet<T> &ema, const ParamSet<T> &params, double decay);

/// Stores the moments under "adam.m/<name>" and "adam.v/<name>".
template <typename T>
void export_adam(const AdamState<T> &state, const std::string &prefix, ParamSet<double> &out, nlohmann::json &meta);
template <typename T>
AdamState<T> import_adam(const ParamSet<double> &in, const std::string &prefix, const nlohmann::json &meta);

} // namespace divreg
