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

#include "divreg/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "divreg/metrics.hpp"
#include "divreg/ops.hpp"
#include "divreg/optim.hpp"
#include "divreg/seed.hpp"
#include "divreg/transform.hpp"

namespace divreg {

nlohmann::json DvLandscapeConfig::to_json() const {
    return {{"net", net.to_json()},
            {"lr", lr},
            {"warmup_steps", warmup_steps},
            {"steps_per_offset", steps_per_offset},
            {"ema_decay", ema_decay},
            {"eval_shuffles", eval_shuffles},
            {"seed", seed}};
}

DvLandscapeConfig DvLandscapeConfig::from_json(const nlohmann::json &j) {
    DvLandscapeConfig c;
    if (j.contains("net")) c.net = KldivNetConfig::from_json(j.at("net"));
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.steps_per_offset = j.value("steps_per_offset", c.steps_per_offset);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.eval_shuffles = j.value("eval_shuffles", c.eval_shuffles);
    c.seed = j.value("seed", c.seed);
    return c;
}

nlohmann::json LandscapeConfig::to_json() const {
    return {{"max_offset", max_offset}, {"step", step},       {"metrics", metrics},
            {"lncc_window", lncc_window}, {"mi_bins", mi_bins}, {"mi_sigma_bins", mi_sigma_bins},
            {"dv", dv.to_json()}};
}

LandscapeConfig LandscapeConfig::from_json(const nlohmann::json &j) {
    LandscapeConfig c;
    c.max_offset = j.value("max_offset", c.max_offset);
    c.step = j.value("step", c.step);
    c.metrics = j.value("metrics", c.metrics);
    c.lncc_window = j.value("lncc_window", c.lncc_window);
    c.mi_bins = j.value("mi_bins", c.mi_bins);
    c.mi_sigma_bins = j.value("mi_sigma_bins", c.mi_sigma_bins);
    if (j.contains("dv")) c.dv = DvLandscapeConfig::from_json(j.at("dv"));
    return c;
}

std::pair<double, double> LandscapeTable::best_offset(const std::string &metric) const {
    const bool minimise = metric == "ssd";
    double best = minimise ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    std::pair<double, double> at{NAN, NAN};
    for (const auto &r : rows) {
        if (r.metric != metric) continue;
        if (minimise ? r.value < best : r.value > best) {
            best = r.value;
            at = {r.dx, r.dy};
        }
    }
    if (std::isnan(at.first)) throw std::invalid_argument("landscape: metric '" + metric + "' not in table");
    return at;
}

void LandscapeTable::write_csv(const std::filesystem::path &path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "dx,dy,metric,value\n";
    for (const auto &r : rows) out << r.dx << ',' << r.dy << ',' << r.metric << ',' << r.value << '\n';
}

void LandscapeTable::write_matrix(const std::filesystem::path &path, const std::string &metric) const {
    std::map<std::pair<double, double>, double> v;
    for (const auto &r : rows) {
        if (r.metric == metric) v[{r.dy, r.dx}] = r.value;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    for (double dy : offsets) {
        for (std::size_t i = 0; i < offsets.size(); ++i) out << (i ? " " : "") << v.at({dy, offsets[i]});
        out << '\n';
    }
}

namespace {

std::vector<double> shift_of(double dx, double dy) { return {dy, dx}; }

// Critic training on a stream of (moved, fixed) tensors.
struct DvProbe {
    const DvLandscapeConfig &cfg;
    Tensor<float> fixed;

    double evaluate(const ParamSet<float> &params, const Tensor<float> &moved) const {
        double sum = 0.0;
        for (Index k = 0; k < cfg.eval_shuffles; ++k) {
            Tape<float> tape;
            BoundParams<float> p(tape, params, false);
            const auto s = dv_similarity(p, cfg.net, tape.constant(moved), tape.constant(fixed), derive_seed(cfg.seed, static_cast<std::uint64_t>(k), 7));
            sum += static_cast<double>(s.similarity.value().item());
        }
        return sum / static_cast<double>(cfg.eval_shuffles);
    }
};

} // namespace

LandscapeTable landscape(const Image &fixed, const Image &moving, const LandscapeConfig &cfg, const LabelMap *fixed_labels,
                         const LabelMap *moving_labels) {
    if (fixed.rank() != 2 || !fixed.same_grid(moving)) throw ShapeError("landscape: needs two 2-D images on the same grid");
    if (cfg.step < 1 || cfg.max_offset < 0) throw std::invalid_argument("landscape: step must be >= 1 and max_offset >= 0");
    const Index limit = std::min(fixed.dims()[0], fixed.dims()[1]) / 4;
    if (cfg.max_offset > limit) {
        throw std::invalid_argument("landscape: offsets up to " + std::to_string(cfg.max_offset) + " exceed a quarter of the image (" + std::to_string(limit) + ")");
    }
    for (const auto &m : cfg.metrics) {
        if (m != "ssd" && m != "lncc" && m != "mi" && m != "dv" && m != "dice") throw std::invalid_argument("landscape: unknown metric '" + m + "'");
        if (m == "dice" && (!fixed_labels || !moving_labels)) throw std::invalid_argument("landscape: dice needs both label maps");
    }
    LandscapeTable table;
    for (Index o = -cfg.max_offset; o <= cfg.max_offset; o += cfg.step) table.offsets.push_back(static_cast<double>(o));
    table.meta = cfg.to_json();
    table.meta["dv_protocol"] = "warm start on random translations, fixed fine-tuning budget per offset, averaged-weight S";

    const bool want_dv = std::find(cfg.metrics.begin(), cfg.metrics.end(), "dv") != cfg.metrics.end();
    DvLandscapeConfig dvc = cfg.dv;
    dvc.net.rank = 2;
    DvProbe probe{dvc, to_tensor<float>(fixed)};
    ParamSet<float> warm;
    if (want_dv) {
        EstimatorConfig est;
        est.lr = dvc.lr;
        est.steps = std::max<Index>(dvc.warmup_steps, 1);
        est.seed = dvc.seed;
        est.ema_decay = dvc.ema_decay;
        const double span = static_cast<double>(cfg.max_offset);
        PairSampler<float> sampler = [&](Index step) {
            std::mt19937_64 rng(derive_seed(dvc.seed, static_cast<std::uint64_t>(step), 5));
            std::uniform_real_distribution<double> u(-span, span);
            const double dx = u(rng), dy = u(rng);
            return std::make_pair(to_tensor<float>(translate_image(moving, shift_of(dx, dy))), probe.fixed);
        };
        warm = dvc.warmup_steps > 0 ? train_estimator<float>(sampler, dvc.net, est).raw : init_kldivnet<float>(dvc.net, dvc.seed);
    }

    for (double dy : table.offsets)
        for (double dx : table.offsets) {
            const Image moved = translate_image(moving, shift_of(dx, dy));
            for (const auto &m : cfg.metrics) {
                double value = 0.0;
                if (m == "ssd") {
                    value = ssd(moved, fixed);
                } else if (m == "lncc") {
                    value = lncc(moved, fixed, cfg.lncc_window);
                } else if (m == "mi") {
                    value = mi_pwde(moved, fixed, cfg.mi_bins, cfg.mi_sigma_bins);
                } else if (m == "dice") {
                    const std::vector<double> off = shift_of(dx, dy);
                    const LabelMap lab = warp_label(*moving_labels, DisplacementField::constant(fixed.dims(), fixed.spacing(), off));
                    value = mean_dice(lab, *fixed_labels);
                } else {
                    const Tensor<float> mt = to_tensor<float>(moved);
                    ParamSet<float> params = warm;
                    if (dvc.steps_per_offset > 0) {
                        EstimatorConfig est;
                        est.lr = dvc.lr;
                        est.steps = dvc.steps_per_offset;
                        est.seed = dvc.seed;
                        est.ema_decay = dvc.ema_decay;
                        PairSampler<float> sampler = [&](Index) { return std::make_pair(mt, probe.fixed); };
                        params = train_estimator<float>(sampler, dvc.net, est, warm).ema;
                    }
                    value = probe.evaluate(params, mt);
                }
                table.rows.push_back({dx, dy, m, value});
            }
        }
    return table;
}

} // namespace divreg
