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

#include "divreg/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace divreg {

ProbTable::ProbTable(Shape dims, std::vector<double> probs) : dims_(std::move(dims)), probs_(std::move(probs)) {
    if (dims_.empty() || dims_.size() > 2) throw std::invalid_argument("ProbTable: support must have 1 or 2 axes");
    if (shape_size(dims_) != static_cast<Index>(probs_.size())) throw std::invalid_argument("ProbTable: size does not match dims");
    double sum = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("ProbTable: negative or non-finite probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("ProbTable: probabilities sum to " + std::to_string(sum));
}

ProbTable ProbTable::marginal(int axis) const {
    if (dims_.size() != 2 || axis < 0 || axis > 1) throw std::invalid_argument("marginal: requires a 2-D table and axis 0 or 1");
    const Index rows = dims_[0], cols = dims_[1];
    std::vector<double> m(static_cast<std::size_t>(axis == 0 ? rows : cols), 0.0);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m[static_cast<std::size_t>(axis == 0 ? i : j)] += at(i, j);
    const auto n = static_cast<Index>(m.size());
    return ProbTable({n}, std::move(m));
}

ProbTable ProbTable::product_of_marginals() const {
    const ProbTable r = marginal(0), c = marginal(1);
    std::vector<double> p;
    p.reserve(probs_.size());
    for (Index i = 0; i < dims_[0]; ++i)
        for (Index j = 0; j < dims_[1]; ++j) p.push_back(r[i] * c[j]);
    return ProbTable(dims_, std::move(p));
}

nlohmann::json ProbTable::to_json() const { return {{"dims", dims_}, {"probs", probs_}}; }

ProbTable ProbTable::from_json(const nlohmann::json &j) {
    return ProbTable(j.at("dims").get<Shape>(), j.at("probs").get<std::vector<double>>());
}

namespace {

Index bin_of(float x, int bins) {
    if (!(x >= 0.0f && x <= 1.0f)) throw std::domain_error("histogram: intensity " + std::to_string(x) + " outside [0, 1]");
    return std::min<Index>(static_cast<Index>(static_cast<double>(x) * bins), bins - 1);
}

void check_bins(int bins) {
    if (bins < 2) throw std::invalid_argument("histogram: bins must be >= 2");
}

} // namespace

ProbTable joint_histogram(const Image &a, const Image &b, int bins) {
    check_bins(bins);
    if (a.dims() != b.dims()) throw ShapeError("joint_histogram: dims mismatch");
    std::vector<double> p(static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins), 0.0);
    for (Index v = 0; v < a.size(); ++v) p[static_cast<std::size_t>(bin_of(a[v], bins) * bins + bin_of(b[v], bins))] += 1.0;
    for (double &x : p) x /= static_cast<double>(a.size());
    return ProbTable({bins, bins}, std::move(p));
}

ProbTable histogram_1d(const Image &a, int bins) {
    check_bins(bins);
    std::vector<double> p(static_cast<std::size_t>(bins), 0.0);
    for (Index v = 0; v < a.size(); ++v) p[static_cast<std::size_t>(bin_of(a[v], bins))] += 1.0;
    for (double &x : p) x /= static_cast<double>(a.size());
    return ProbTable({bins}, std::move(p));
}

double kl_discrete(const ProbTable &mu, const ProbTable &lam) {
    if (mu.dims() != lam.dims()) throw ShapeError("kl_discrete: supports differ");
    double kl = 0.0;
    for (Index i = 0; i < mu.size(); ++i) {
        if (mu[i] == 0.0) continue;
        if (lam[i] == 0.0) throw InfiniteDivergenceError("kl_discrete: reference has zero mass where mu > 0");
        kl += mu[i] * std::log(mu[i] / lam[i]);
    }
    return std::max(kl, 0.0);
}

double mi_discrete(const ProbTable &joint) { return kl_discrete(joint, joint.product_of_marginals()); }

double dv_bound_discrete(const ProbTable &mu, const ProbTable &lam, std::span<const double> phi) {
    if (mu.dims() != lam.dims() || static_cast<Index>(phi.size()) != mu.size()) throw ShapeError("dv_bound_discrete: supports differ");
    double m = -INFINITY;
    for (Index i = 0; i < lam.size(); ++i) {
        if (!std::isfinite(phi[static_cast<std::size_t>(i)])) throw std::invalid_argument("dv_bound_discrete: phi must be finite");
        if (lam[i] > 0.0) m = std::max(m, phi[static_cast<std::size_t>(i)]);
    }
    double expect = 0.0, z = 0.0;
    for (Index i = 0; i < mu.size(); ++i) {
        expect += mu[i] * phi[static_cast<std::size_t>(i)];
        if (lam[i] > 0.0) z += lam[i] * std::exp(phi[static_cast<std::size_t>(i)] - m);
    }
    return expect - (m + std::log(z));
}

} // namespace divreg
