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
#include <functional>
#include <span>
#include <vector>

#include "divreg/tape.hpp"

namespace divreg {

using ScalarFunction = std::function<Var<double>(Tape<double> &, std::span<const Var<double>>)>;

struct GradCheckOptions {
    double eps = 1e-6;
    /// Check at most this many coordinates (chosen at random); <= 0 checks all.
    Index max_coords = 0;
    std::uint64_t seed = 0;
    /// A coordinate whose one-sided slopes differ by more than this (relative)
    /// is treated as sitting on a kink.
    double kink_tol = 1e-3;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    Index coords_checked = 0;
    bool kink_detected = false;
};

/// Central differences per coordinate against reverse-mode adjoints. The error
/// for each coordinate is |a - g| / max(1, |a|, |g|); the maximum is returned.
/// Kinked coordinates are excluded from the maximum and flagged.
GradCheckResult grad_check(const ScalarFunction &f, const std::vector<Tensor<double>> &inputs,
                           const GradCheckOptions &opts = {});

GradCheckResult grad_check(const std::function<Var<double>(Tape<double> &, const Var<double> &)> &f,
                           const Tensor<double> &x, const GradCheckOptions &opts = {});

/// Regenerates inputs with a fresh attempt number whenever the checker lands on
/// a kink, up to `max_attempts` times.
GradCheckResult grad_check_resampled(const ScalarFunction &f,
                                     const std::function<std::vector<Tensor<double>>(std::uint64_t attempt)> &make_inputs,
                                     const GradCheckOptions &opts = {}, int max_attempts = 8);

} // namespace divreg
