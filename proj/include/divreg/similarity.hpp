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

#include "divreg/grid.hpp"
#include "divreg/tape.hpp"

namespace divreg {

inline constexpr Index kDefaultLnccWindow = 9;
inline constexpr int kDefaultMiBins = 16;
inline constexpr double kDefaultMiSigmaBins = 1.0;

namespace ops {

/// Mean squared difference over all elements.
template <typename T>
Var<T> ssd(const Var<T> &a, const Var<T> &b);

/// Mean over voxels of cov^2 / (var_a * var_b + 1e-5) inside a `window`^rank
/// box truncated at the image border. Local moments are window sums rather
/// than window means. Result lies in [0, 1]. Inputs: (N, C, S...).
template <typename T>
Var<T> lncc(const Var<T> &a, const Var<T> &b, Index window = kDefaultLnccWindow);

/// Mutual information (nats) of a soft joint histogram. Each intensity in
/// [0, 1] spreads over `bins` centres with a Gaussian of `sigma_bins` bin
/// widths, truncated at 3 sigma and renormalised. Averaged over the batch.
template <typename T>
Var<T> mi_pwde(const Var<T> &a, const Var<T> &b, int bins = kDefaultMiBins, double sigma_bins = kDefaultMiSigmaBins);

} // namespace ops

double ssd(const Image &a, const Image &b);
double lncc(const Image &a, const Image &b, Index window = kDefaultLnccWindow);
double mi_pwde(const Image &a, const Image &b, int bins = kDefaultMiBins, double sigma_bins = kDefaultMiSigmaBins);

} // namespace divreg
