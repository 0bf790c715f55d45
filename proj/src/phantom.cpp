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

#include "divreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "divreg/seed.hpp"
#include "divreg/transform.hpp"

namespace divreg {

namespace {

// Class intensities of the template. Under the non-monotone remap they become
// 0.9, 0.4, 0.2, 0.7: the order is scrambled but the classes stay 0.2 apart.
constexpr double kClassLevel[4] = {0.05, 0.30, 0.60, 0.85};
constexpr double kTexture = 0.05;

struct Ellipsoid {
    std::vector<double> centre, radii;
    std::int32_t label;
};

bool inside(const Ellipsoid &e, const std::vector<Index> &p) {
    double r = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        const double d = (static_cast<double>(p[a]) - e.centre[a]) / e.radii[a];
        r += d * d;
    }
    return r <= 1.0;
}

} // namespace

BasePattern parse_base_pattern(const std::string &s) {
    if (s == "shapes") return BasePattern::shapes;
    if (s == "gradient-rings" || s == "gradient_rings") return BasePattern::gradient_rings;
    throw std::invalid_argument("unknown base pattern '" + s + "' (expected shapes or gradient-rings)");
}

std::string to_string(BasePattern p) { return p == BasePattern::shapes ? "shapes" : "gradient-rings"; }

void PhantomConfig::validate() const {
    if (dims.empty() || dims.size() > 3) throw std::invalid_argument("phantom: rank must be 1, 2 or 3");
    if (spacing.size() != dims.size()) throw std::invalid_argument("phantom: spacing rank must match dims");
    for (std::size_t a = 0; a < dims.size(); ++a) {
        if (dims[a] < 4) throw std::invalid_argument("phantom: every extent must be >= 4");
        if (!(spacing[a] > 0.0)) throw std::invalid_argument("phantom: spacing must be positive");
    }
    if (!(ffd_spacing_mm > 0.0)) throw std::invalid_argument("phantom: ffd_spacing_mm must be positive");
    if (!(ffd_sigma_mm >= 0.0)) throw std::invalid_argument("phantom: ffd_sigma_mm must be non-negative");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("phantom: noise_sigma must be non-negative");
}

nlohmann::json PhantomConfig::to_json() const {
    nlohmann::json j{{"base_pattern", to_string(base_pattern)},
                     {"dims", dims},
                     {"spacing", spacing},
                     {"ffd_spacing_mm", ffd_spacing_mm},
                     {"ffd_sigma_mm", ffd_sigma_mm},
                     {"modality_map", to_string(modality_map)},
                     {"noise_sigma", noise_sigma},
                     {"seed", seed}};
    if (pattern_seed) j["pattern_seed"] = *pattern_seed;
    return j;
}

PhantomConfig PhantomConfig::from_json(const nlohmann::json &j) {
    PhantomConfig c;
    if (j.contains("base_pattern")) c.base_pattern = parse_base_pattern(j.at("base_pattern").get<std::string>());
    c.dims = j.value("dims", c.dims);
    c.spacing = j.value("spacing", Spacing(c.dims.size(), 1.0));
    c.ffd_spacing_mm = j.value("ffd_spacing_mm", c.ffd_spacing_mm);
    c.ffd_sigma_mm = j.value("ffd_sigma_mm", c.ffd_sigma_mm);
    if (j.contains("modality_map")) c.modality_map = parse_modality_map(j.at("modality_map").get<std::string>());
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
    if (j.contains("pattern_seed") && !j.at("pattern_seed").is_null()) c.pattern_seed = j.at("pattern_seed").get<std::uint64_t>();
    c.validate();
    return c;
}

LabeledImage render_base(BasePattern pattern, const Shape &dims, const Spacing &spacing, std::uint64_t pattern_seed) {
    const int rank = static_cast<int>(dims.size());
    const Index vox = shape_size(dims);
    std::mt19937_64 rng(pattern_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    std::vector<double> centre(static_cast<std::size_t>(rank));
    for (int a = 0; a < rank; ++a) centre[static_cast<std::size_t>(a)] = 0.5 * static_cast<double>(dims[static_cast<std::size_t>(a)] - 1);
    double min_extent = static_cast<double>(*std::min_element(dims.begin(), dims.end()));

    std::vector<std::int32_t> lab(static_cast<std::size_t>(vox), 0);
    if (pattern == BasePattern::shapes) {
        // A body with nested organs: class 1 body, class 2 organs, class 3 cores.
        std::vector<Ellipsoid> shapes;
        Ellipsoid body{centre, {}, 1};
        for (int a = 0; a < rank; ++a) body.radii.push_back(between(0.36, 0.44) * static_cast<double>(dims[static_cast<std::size_t>(a)]));
        shapes.push_back(body);
        const int organs = 3 + static_cast<int>(rng() % 2);
        for (int k = 0; k < organs; ++k) {
            Ellipsoid organ{{}, {}, 2};
            for (int a = 0; a < rank; ++a) {
                const double half = body.radii[static_cast<std::size_t>(a)];
                organ.centre.push_back(centre[static_cast<std::size_t>(a)] + between(-0.5, 0.5) * half);
                organ.radii.push_back(between(0.12, 0.2) * min_extent);
            }
            shapes.push_back(organ);
            Ellipsoid core{organ.centre, {}, 3};
            for (double r : organ.radii) core.radii.push_back(r * between(0.35, 0.55));
            shapes.push_back(core);
        }
        for (Index v = 0; v < vox; ++v) {
            const auto p = unravel(v, dims);
            for (const auto &e : shapes) {
                if (inside(e, p)) lab[static_cast<std::size_t>(v)] = e.label;
            }
        }
    } else {
        const double band = between(0.07, 0.09) * min_extent;
        std::vector<double> shift(static_cast<std::size_t>(rank));
        for (auto &s : shift) s = between(-0.05, 0.05) * min_extent;
        for (Index v = 0; v < vox; ++v) {
            const auto p = unravel(v, dims);
            double r2 = 0.0;
            for (int a = 0; a < rank; ++a) {
                const double d = static_cast<double>(p[static_cast<std::size_t>(a)]) - centre[static_cast<std::size_t>(a)] - shift[static_cast<std::size_t>(a)];
                r2 += d * d;
            }
            const auto ring = static_cast<Index>(std::sqrt(r2) / band);
            // rings cycle through the foreground classes; outside is background
            lab[static_cast<std::size_t>(v)] = ring >= 5 ? 0 : static_cast<std::int32_t>(3 - (ring % 3));
        }
    }

    // Smooth texture: a random low-frequency cosine per axis.
    std::vector<double> freq(static_cast<std::size_t>(rank)), phase(static_cast<std::size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        freq[static_cast<std::size_t>(a)] = between(1.0, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(dims[static_cast<std::size_t>(a)]);
        phase[static_cast<std::size_t>(a)] = between(0.0, 2.0 * std::numbers::pi);
    }
    std::vector<float> img(static_cast<std::size_t>(vox));
    for (Index v = 0; v < vox; ++v) {
        const auto p = unravel(v, dims);
        double tex = 0.0;
        for (int a = 0; a < rank; ++a) {
            tex += std::cos(freq[static_cast<std::size_t>(a)] * static_cast<double>(p[static_cast<std::size_t>(a)]) + phase[static_cast<std::size_t>(a)]);
        }
        const std::int32_t c = lab[static_cast<std::size_t>(v)];
        double x = kClassLevel[c];
        if (pattern == BasePattern::gradient_rings && c > 0) {
            double r2 = 0.0;
            for (int a = 0; a < rank; ++a) {
                const double d = static_cast<double>(p[static_cast<std::size_t>(a)]) - centre[static_cast<std::size_t>(a)];
                r2 += d * d;
            }
            x += 0.06 * (std::sqrt(r2) / min_extent - 0.25);
        }
        if (c > 0) x += kTexture * tex / static_cast<double>(rank);
        img[static_cast<std::size_t>(v)] = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
    return {Image(dims, spacing, std::move(img)), LabelMap(dims, spacing, std::move(lab))};
}

namespace {

Image add_noise(const Image &img, double sigma, std::uint64_t seed) {
    std::vector<float> out(img.values());
    if (sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, sigma);
        for (float &x : out) x = static_cast<float>(std::clamp(static_cast<double>(x) + n(rng), 0.0, 1.0));
    }
    return Image(img.dims(), img.spacing(), std::move(out));
}

} // namespace

PhantomPair gen_phantom_pair(const PhantomConfig &cfg) {
    cfg.validate();
    const LabeledImage base = render_base(cfg.base_pattern, cfg.dims, cfg.spacing, cfg.pattern_seed.value_or(cfg.seed));
    const FfdGrid ffd = sample_random_ffd(Spacing(cfg.dims.size(), cfg.ffd_spacing_mm), cfg.ffd_sigma_mm, cfg.dims, cfg.spacing,
                                          derive_seed(cfg.seed, 0, 1));
    PhantomPair out;
    out.truth = ffd_to_dvf(ffd, cfg.dims, cfg.spacing);
    out.fixed = add_noise(base.image, cfg.noise_sigma, derive_seed(cfg.seed, 0, 2));
    out.fixed_labels = base.labels;
    const Image remapped = modality_remap(base.image, cfg.modality_map);
    out.moving = add_noise(warp_image(remapped, out.truth), cfg.noise_sigma, derive_seed(cfg.seed, 0, 3));
    out.moving_labels = warp_label(base.labels, out.truth);
    return out;
}

} // namespace divreg
