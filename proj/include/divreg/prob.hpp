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

#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "divreg/grid.hpp"

namespace divreg {

/// Raised when the reference distribution is zero where the other is not.
class InfiniteDivergenceError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Discrete distribution over a 1-D or 2-D grid of bins (row-major).
class ProbTable {
public:
    ProbTable() = default;
    /// Throws std::invalid_argument unless entries are >= 0 and sum to 1 (1e-9).
    ProbTable(Shape dims, std::vector<double> probs);

    const Shape &dims() const noexcept { return dims_; }
    const std::vector<double> &probs() const noexcept { return probs_; }
    Index size() const noexcept { return static_cast<Index>(probs_.size()); }
    double operator[](Index i) const { return probs_[static_cast<std::size_t>(i)]; }
    double at(Index i, Index j) const { return probs_[static_cast<std::size_t>(i * dims_.at(1) + j)]; }

    /// Row (axis 0) and column (axis 1) sums of a 2-D table.
    ProbTable marginal(int axis) const;
    /// Outer product of the two marginals of a 2-D table.
    ProbTable product_of_marginals() const;

    nlohmann::json to_json() const;
    static ProbTable from_json(const nlohmann::json &j);

private:
    Shape dims_;
    std::vector<double> probs_;
};

/// Hard-binned joint histogram; bin k covers [k/bins, (k+1)/bins), the last
/// bin is closed. Intensities outside [0, 1] throw std::domain_error.
ProbTable joint_histogram(const Image &a, const Image &b, int bins);
ProbTable histogram_1d(const Image &a, int bins);

/// sum mu log(mu / lam) in nats.
double kl_discrete(const ProbTable &mu, const ProbTable &lam);
/// KL between a joint table and the product of its marginals.
double mi_discrete(const ProbTable &joint);
/// E_mu[phi] - log E_lam[exp(phi)], evaluated with a max shift.
double dv_bound_discrete(const ProbTable &mu, const ProbTable &lam, std::span<const double> phi);

} // namespace divreg
