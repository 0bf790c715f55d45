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

#include "divreg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace divreg {

namespace {

double evaluate(const ScalarFunction &f, const std::vector<Tensor<double>> &inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto &t : inputs) vars.push_back(tape.constant(t));
    const Var<double> out = f(tape, vars);
    if (out.value().size() != 1) throw ShapeError("grad_check: function output is not scalar");
    return out.value()[0];
}

} // namespace

GradCheckResult grad_check(const ScalarFunction &f, const std::vector<Tensor<double>> &inputs, const GradCheckOptions &opts) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto &t : inputs) vars.push_back(tape.variable(t));
    const Var<double> out = f(tape, vars);
    if (out.value().size() != 1) throw ShapeError("grad_check: function output is not scalar");
    tape.backward(out);
    std::vector<Tensor<double>> adjoints;
    for (const auto &v : vars) adjoints.push_back(tape.grad(v));

    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (Index i = 0; i < inputs[k].size(); ++i) coords.emplace_back(k, i);
    if (opts.max_coords > 0 && static_cast<Index>(coords.size()) > opts.max_coords) {
        std::mt19937_64 rng(opts.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(opts.max_coords));
    }

    const double f0 = evaluate(f, inputs);
    GradCheckResult result;
    std::vector<Tensor<double>> probe = inputs;
    for (const auto &[k, i] : coords) {
        const double x0 = probe[k][i];
        probe[k][i] = x0 + opts.eps;
        const double fp = evaluate(f, probe);
        probe[k][i] = x0 - opts.eps;
        const double fm = evaluate(f, probe);
        probe[k][i] = x0;

        const double numeric = (fp - fm) / (2.0 * opts.eps);
        const double analytic = adjoints[k][i];
        const double forward = (fp - f0) / opts.eps;
        const double backward = (f0 - fm) / opts.eps;
        const double scale = std::max({1.0, std::abs(forward), std::abs(backward)});
        if (std::abs(forward - backward) > opts.kink_tol * scale) {
            result.kink_detected = true;
            continue;
        }
        const double err = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.coords_checked;
    }
    return result;
}

GradCheckResult grad_check(const std::function<Var<double>(Tape<double> &, const Var<double> &)> &f,
                           const Tensor<double> &x, const GradCheckOptions &opts) {
    ScalarFunction g = [&f](Tape<double> &t, std::span<const Var<double>> v) { return f(t, v[0]); };
    return grad_check(g, std::vector<Tensor<double>>{x}, opts);
}

GradCheckResult grad_check_resampled(const ScalarFunction &f,
                                     const std::function<std::vector<Tensor<double>>(std::uint64_t)> &make_inputs,
                                     const GradCheckOptions &opts, int max_attempts) {
    GradCheckResult r;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        r = grad_check(f, make_inputs(static_cast<std::uint64_t>(attempt)), opts);
        if (!r.kink_detected) return r;
    }
    return r;
}

} // namespace divreg
