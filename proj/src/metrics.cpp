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

#include "divreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

namespace divreg {

namespace {

void check_dims(const LabelMap &a, const LabelMap &b, const char *op) {
    if (a.dims() != b.dims()) throw ShapeError(std::string(op) + ": label maps differ in dims");
}

} // namespace

double dice(const LabelMap &a, const LabelMap &b, std::int32_t class_id) {
    check_dims(a, b, "dice");
    Index na = 0, nb = 0, both = 0;
    for (Index v = 0; v < a.size(); ++v) {
        const bool in_a = a[v] == class_id, in_b = b[v] == class_id;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double mean_dice(const LabelMap &a, const LabelMap &b) {
    check_dims(a, b, "mean_dice");
    std::set<std::int32_t> classes;
    for (Index v = 0; v < a.size(); ++v) {
        if (a[v] != 0) classes.insert(a[v]);
        if (b[v] != 0) classes.insert(b[v]);
    }
    if (classes.empty()) return 1.0;
    double sum = 0.0;
    for (std::int32_t c : classes) sum += dice(a, b, c);
    return sum / static_cast<double>(classes.size());
}

SurfaceSet extract_surface(const LabelMap &lab, std::int32_t class_id) {
    const Shape &dims = lab.dims();
    const int rank = lab.rank();
    std::vector<Index> stride(static_cast<std::size_t>(rank), 1);
    for (int a = rank - 2; a >= 0; --a) stride[static_cast<std::size_t>(a)] = stride[static_cast<std::size_t>(a + 1)] * dims[static_cast<std::size_t>(a + 1)];
    SurfaceSet s;
    s.rank = rank;
    for (Index v = 0; v < lab.size(); ++v) {
        if (lab[v] != class_id) continue;
        const auto p = unravel(v, dims);
        bool boundary = false;
        for (int a = 0; a < rank && !boundary; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            if (p[ua] == 0 || p[ua] == dims[ua] - 1) {
                boundary = true;
            } else {
                boundary = lab[v - stride[ua]] != class_id || lab[v + stride[ua]] != class_id;
            }
        }
        if (!boundary) continue;
        for (int a = 0; a < rank; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            s.coords.push_back(static_cast<double>(p[ua]) * lab.spacing()[ua]);
        }
    }
    if (s.coords.empty()) throw AbsentClassError("class " + std::to_string(class_id) + " is absent from the label map");
    return s;
}

std::vector<double> directed_distances(const SurfaceSet &from, const SurfaceSet &to) {
    if (from.rank != to.rank) throw ShapeError("surface ranks differ");
    const int r = from.rank;
    std::vector<double> out(static_cast<std::size_t>(from.size()));
    for (Index i = 0; i < from.size(); ++i) {
        const double *p = from.coords.data() + i * r;
        double best = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < to.size(); ++j) {
            const double *q = to.coords.data() + j * r;
            double d2 = 0.0;
            for (int a = 0; a < r; ++a) d2 += (p[a] - q[a]) * (p[a] - q[a]);
            best = std::min(best, d2);
        }
        out[static_cast<std::size_t>(i)] = std::sqrt(best);
    }
    return out;
}

double asd(const LabelMap &a, const LabelMap &b, std::int32_t class_id) {
    check_dims(a, b, "asd");
    const SurfaceSet sa = extract_surface(a, class_id), sb = extract_surface(b, class_id);
    const auto dab = directed_distances(sa, sb), dba = directed_distances(sb, sa);
    const double mab = std::accumulate(dab.begin(), dab.end(), 0.0) / static_cast<double>(dab.size());
    const double mba = std::accumulate(dba.begin(), dba.end(), 0.0) / static_cast<double>(dba.size());
    return 0.5 * (mab + mba);
}

namespace {

double percentile_of(std::vector<double> d, double q) {
    if (q >= 100.0) return *std::max_element(d.begin(), d.end());
    std::sort(d.begin(), d.end());
    const double pos = q / 100.0 * static_cast<double>(d.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

} // namespace

double hausdorff(const LabelMap &a, const LabelMap &b, std::int32_t class_id, double percentile) {
    check_dims(a, b, "hausdorff");
    if (!(percentile > 0.0 && percentile <= 100.0)) throw std::invalid_argument("hausdorff: percentile must lie in (0, 100]");
    const SurfaceSet sa = extract_surface(a, class_id), sb = extract_surface(b, class_id);
    return std::max(percentile_of(directed_distances(sa, sb), percentile), percentile_of(directed_distances(sb, sa), percentile));
}

LabelScores score_labels(const LabelMap &reference, const LabelMap &candidate, double hd_percentile) {
    check_dims(reference, candidate, "score_labels");
    std::set<std::int32_t> ref, cand;
    for (Index v = 0; v < reference.size(); ++v) {
        if (reference[v] != 0) ref.insert(reference[v]);
        if (candidate[v] != 0) cand.insert(candidate[v]);
    }
    LabelScores s;
    if (ref.empty()) return {1.0, NAN, NAN};
    Index shared = 0;
    for (std::int32_t c : ref) {
        s.dice += dice(reference, candidate, c);
        if (!cand.count(c)) continue;
        s.asd += asd(reference, candidate, c);
        s.hd += hausdorff(reference, candidate, c, hd_percentile);
        ++shared;
    }
    s.dice /= static_cast<double>(ref.size());
    s.asd = shared ? s.asd / static_cast<double>(shared) : NAN;
    s.hd = shared ? s.hd / static_cast<double>(shared) : NAN;
    return s;
}

} // namespace divreg
