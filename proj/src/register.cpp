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

#include "divreg/register.hpp"

#include <cmath>
#include <stdexcept>

#include "divreg/ops.hpp"
#include "divreg/optim.hpp"
#include "divreg/seed.hpp"
#include "divreg/transform.hpp"

namespace divreg {

Metric parse_metric(const std::string &s) {
    if (s == "ssd") return Metric::ssd;
    if (s == "lncc") return Metric::lncc;
    if (s == "mi" || s == "mi_pwde") return Metric::mi;
    if (s == "dv") return Metric::dv;
    throw std::invalid_argument("unknown metric '" + s + "' (expected ssd, lncc, mi or dv)");
}

std::string to_string(Metric m) {
    switch (m) {
    case Metric::ssd: return "ssd";
    case Metric::lncc: return "lncc";
    case Metric::mi: return "mi";
    case Metric::dv: return "dv";
    }
    return "?";
}

TransformModel parse_transform_model(const std::string &s) {
    if (s == "ffd") return TransformModel::ffd;
    if (s == "dvf") return TransformModel::dvf;
    throw std::invalid_argument("unknown transform model '" + s + "' (expected ffd or dvf)");
}

RegisterResult iterative_register(const Image &fixed, const Image &moving, const RegisterConfig &cfg) {
    if (!fixed.same_grid(moving)) throw ShapeError("iterative_register: fixed and moving grids differ");
    if (cfg.iterations < 0) throw std::invalid_argument("iterative_register: iterations must be >= 0");
    if (!(cfg.smooth_weight >= 0.0)) throw std::invalid_argument("iterative_register: smooth_weight must be >= 0");
    const Shape &dims = fixed.dims();
    const Spacing &sp = fixed.spacing();
    const int rank = fixed.rank();
    const Spacing cs(dims.size(), cfg.control_spacing_mm);

    ParamSet<double> transform;
    if (cfg.model == TransformModel::dvf) {
        transform["u"] = to_tensor<double>(DisplacementField::zeros(dims, sp));
    } else {
        const FfdGrid g = FfdGrid::covering(dims, sp, cs);
        Shape s{1, rank};
        s.insert(s.end(), g.control_dims.begin(), g.control_dims.end());
        transform["u"] = Tensor<double>(s);
    }
    KldivNetConfig net = cfg.dv_net;
    net.rank = rank;
    ParamSet<double> critic;
    if (cfg.metric == Metric::dv) critic = init_kldivnet<double>(net, cfg.seed);
    AdamState<double> adam_t, adam_c;
    const Tensor<double> ft = to_tensor<double>(fixed), mt = to_tensor<double>(moving);

    RegisterResult out;
    for (Index it = 0; it <= cfg.iterations; ++it) {
        const bool last = it == cfg.iterations;
        Tape<double> tape;
        BoundParams<double> tp(tape, transform, !last);
        BoundParams<double> cp(tape, critic, !last);
        const Var<double> f = tape.constant(ft), m = tape.constant(mt);
        const Var<double> field = cfg.model == TransformModel::dvf ? tp["u"] : ops::ffd_dense(tp["u"], dims, sp, cs);
        const Var<double> moved = ops::warp(m, field);
        Var<double> sim;
        switch (cfg.metric) {
        case Metric::ssd: sim = ops::scale(ops::ssd(moved, f), -1.0); break;
        case Metric::lncc: sim = ops::lncc(moved, f, cfg.lncc_window); break;
        case Metric::mi: sim = ops::mi_pwde(moved, f, cfg.mi_bins, cfg.mi_sigma_bins); break;
        case Metric::dv: sim = dv_similarity(cp, net, moved, f, derive_seed(cfg.seed, static_cast<std::uint64_t>(it))).similarity; break;
        }
        out.history.push_back(sim.value().item());
        if (last) {
            out.field = field_from_tensor(field.value(), 0, sp);
            break;
        }
        Var<double> loss = ops::scale(sim, -1.0);
        if (cfg.smooth_weight > 0.0) loss = ops::add(loss, ops::scale(ops::smoothness_penalty(field), cfg.smooth_weight));
        if (!std::isfinite(loss.value().item())) throw NonFiniteError("iterative_register: loss is not finite at iteration " + std::to_string(it));
        tape.backward(loss);
        if (cfg.metric == Metric::dv) {
            // the critic ascends S, i.e. descends the same loss
            adam_step(critic, cp.gradients(), adam_c, AdamConfig{cfg.dv_lr});
        }
        adam_step(transform, tp.gradients(), adam_t, AdamConfig{cfg.lr});
    }
    return out;
}

} // namespace divreg
