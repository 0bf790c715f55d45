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

#include "divreg/intensity.hpp"

#include <algorithm>
#include <cmath>

namespace divreg {

Image normalize_intensity(const Image &img, NormalizeMode mode) {
    std::vector<float> out(img.values().size());
    const auto &v = img.values();
    if (v.empty()) throw DegenerateInputError("empty image");
    if (mode == NormalizeMode::minmax) {
        const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
        const double lo = *lo_it, hi = *hi_it;
        if (!(hi > lo)) throw DegenerateInputError("minmax normalization of a constant image");
        const double range = hi - lo;
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - lo) / range);
        // pin the extremes so that repeated normalization is exactly idempotent
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] == *lo_it) out[i] = 0.0f;
            if (v[i] == *hi_it) out[i] = 1.0f;
        }
    } else {
        double mean = 0.0;
        for (float x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (float x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        if (!(var > 0.0)) throw DegenerateInputError("zscore normalization of a constant image");
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - mean) / sd);
    }
    return Image(img.dims(), img.spacing(), std::move(out));
}

float remap_value(float x, ModalityMap mapping) {
    switch (mapping) {
    case ModalityMap::identity: return x;
    case ModalityMap::invert: return 1.0f - x;
    case ModalityMap::nonmono: return x < 0.5f ? 1.0f - 2.0f * x : 2.0f * x - 1.0f;
    }
    return x;
}

Image modality_remap(const Image &img, ModalityMap mapping) {
    std::vector<float> out(img.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float x = img.values()[i];
        if (x < 0.0f || x > 1.0f) throw std::invalid_argument("modality_remap: intensities must lie in [0,1]");
        out[i] = remap_value(x, mapping);
    }
    return Image(img.dims(), img.spacing(), std::move(out));
}

NormalizeMode parse_normalize_mode(const std::string &s) {
    if (s == "minmax") return NormalizeMode::minmax;
    if (s == "zscore") return NormalizeMode::zscore;
    throw std::invalid_argument("unknown normalization mode '" + s + "'");
}

ModalityMap parse_modality_map(const std::string &s) {
    if (s == "identity") return ModalityMap::identity;
    if (s == "invert") return ModalityMap::invert;
    if (s == "nonmono") return ModalityMap::nonmono;
    throw std::invalid_argument("unknown modality map '" + s + "'");
}

std::string to_string(ModalityMap m) {
    switch (m) {
    case ModalityMap::identity: return "identity";
    case ModalityMap::invert: return "invert";
    case ModalityMap::nonmono: return "nonmono";
    }
    return "?";
}

} // namespace divreg
