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

#include "divreg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "divreg/metaimage.hpp"

namespace divreg {

namespace fs = std::filesystem;

SplitCounts split_counts(Index n, double train, double val, double test) {
    const double r[3] = {train, val, test};
    double total = 0.0;
    for (double x : r) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("split ratios must be finite and non-negative");
        total += x;
    }
    if (!(total > 0.0)) throw std::invalid_argument("split ratios must not all be zero");
    if (n < 0) throw std::invalid_argument("case count must be non-negative");
    Index c[3];
    double rem[3];
    Index assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = static_cast<double>(n) * r[k] / total;
        c[k] = static_cast<Index>(std::floor(exact));
        rem[k] = exact - static_cast<double>(c[k]);
        assigned += c[k];
    }
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int x, int y) { return rem[x] > rem[y]; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++c[order[k % 3]];
    return {c[0], c[1], c[2]};
}

void write_pair(const fs::path &dir, const PairRecord &pair) {
    fs::create_directories(dir);
    save_image(pair.fixed, dir / "fixed.mha");
    save_image(pair.moving, dir / "moving.mha");
    if (pair.fixed_labels) save_labels(*pair.fixed_labels, dir / "fixed_labels.mha");
    if (pair.moving_labels) save_labels(*pair.moving_labels, dir / "moving_labels.mha");
    if (pair.truth) save_field(*pair.truth, dir / "truth_field.mha");
}

PairRecord read_pair(const fs::path &dir) {
    PairRecord p;
    p.id = dir.filename().string();
    p.fixed = load_image(dir / "fixed.mha");
    p.moving = load_image(dir / "moving.mha");
    if (fs::exists(dir / "fixed_labels.mha")) p.fixed_labels = load_labels(dir / "fixed_labels.mha");
    if (fs::exists(dir / "moving_labels.mha")) p.moving_labels = load_labels(dir / "moving_labels.mha");
    if (fs::exists(dir / "truth_field.mha")) p.truth = load_field(dir / "truth_field.mha");
    if (p.fixed.dims() != p.moving.dims()) throw ShapeError("pair " + p.id + ": fixed and moving dims differ");
    return p;
}

std::vector<fs::path> list_pairs(const fs::path &root, const std::string &split) {
    const fs::path dir = root / split;
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset split not found: " + dir.string());
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "fixed.mha")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<PairRecord> load_split(const fs::path &root, const std::string &split) {
    std::vector<PairRecord> out;
    for (const auto &d : list_pairs(root, split)) out.push_back(read_pair(d));
    return out;
}

} // namespace divreg
