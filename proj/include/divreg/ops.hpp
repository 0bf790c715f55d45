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

#include <vector>

#include "divreg/tape.hpp"

// Differentiable primitives. Every function appends one node to the tape of
// its operands and returns the handle of the result. Tensors follow the
// (batch, channels, spatial...) layout unless noted otherwise.
namespace divreg::ops {

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> sub(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> scale(const Var<T> &a, T factor);
template <typename T> Var<T> add_scalar(const Var<T> &a, T c);
template <typename T> Var<T> square(const Var<T> &a);

/// Throws NonFiniteError on overflow.
template <typename T> Var<T> exp(const Var<T> &a);
/// Throws std::domain_error on non-positive input.
template <typename T> Var<T> log(const Var<T> &a);
template <typename T> Var<T> sigmoid(const Var<T> &a);
/// max(x, slope*x) for slope in (0,1).
template <typename T> Var<T> leaky_relu(const Var<T> &a, T slope);
template <typename T> Var<T> relu(const Var<T> &a);

/// Cross-correlation with zero padding (k-1)/2 per axis.
/// x: (N, Ci, S...), w: (Co, Ci, k...), b: (Co). Kernel extents must be odd.
/// Output spatial extents are ceil(in / stride).
template <typename T> Var<T> conv(const Var<T> &x, const Var<T> &w, const Var<T> &b, Index stride = 1);

/// Block average over factor^rank cells; every spatial extent must divide by factor.
template <typename T> Var<T> avg_pool(const Var<T> &x, Index factor);
template <typename T> Var<T> upsample_nearest(const Var<T> &x, Index factor);
/// (N, C, S...) -> (N, C)
template <typename T> Var<T> global_avg_pool(const Var<T> &x);
/// x: (N, Cin), w: (Cout, Cin), b: (Cout) -> (N, Cout)
template <typename T> Var<T> linear(const Var<T> &x, const Var<T> &w, const Var<T> &b);
template <typename T> Var<T> concat_channels(const std::vector<Var<T>> &parts);
/// x: (N, C, S...) scaled by s: (N, C) per channel.
template <typename T> Var<T> scale_channels(const Var<T> &x, const Var<T> &s);
/// y[n, c, i] = x[n, c, perm[n][i]]; one permutation of the spatial index per sample.
template <typename T> Var<T> permute_spatial(const Var<T> &x, const std::vector<std::vector<Index>> &perm);

template <typename T> Var<T> reduce_sum(const Var<T> &a);
template <typename T> Var<T> reduce_mean(const Var<T> &a);
/// m + log(mean(exp(x - m))) with m = max(x); the adjoint is the softmax weighting.
template <typename T> Var<T> log_mean_exp(const Var<T> &a);
template <typename T> Var<T> softmax(const Var<T> &a, int axis);

} // namespace divreg::ops
