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

#include "divreg/train.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "divreg/ops.hpp"
#include "divreg/seed.hpp"
#include "divreg/transform.hpp"

namespace divreg {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (!(smooth_weight >= 0.0)) throw std::invalid_argument("train: smooth_weight must be >= 0");
    if (mi_bins < 2) throw std::invalid_argument("train: mi_bins must be >= 2");
    if (lncc_window < 1 || lncc_window % 2 == 0) throw std::invalid_argument("train: lncc_window must be odd");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("train: ema_decay must lie in [0, 1)");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
    regnet.validate();
    kldivnet.validate();
    if (regnet.rank != kldivnet.rank) throw std::invalid_argument("train: regnet and kldivnet ranks differ");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"loss", to_string(loss)},
            {"lr", lr},
            {"iterations", iterations},
            {"batch", batch},
            {"smooth_weight", smooth_weight},
            {"mi_bins", mi_bins},
            {"mi_sigma_bins", mi_sigma_bins},
            {"lncc_window", lncc_window},
            {"ema_decay", ema_decay},
            {"seed", seed},
            {"augment", augment},
            {"max_translation", augmentation.max_translation},
            {"max_rotation_deg", augmentation.max_rotation_deg},
            {"alternating", alternating},
            {"denominator_ema", denominator_ema},
            {"checkpoint_every", checkpoint_every},
            {"regnet", regnet.to_json()},
            {"kldivnet", kldivnet.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json &j) {
    TrainConfig c;
    const std::set<std::string> known{"loss",          "lr",           "iterations", "batch",   "smooth_weight",   "mi_bins",
                                      "mi_sigma_bins", "lncc_window",  "ema_decay",  "seed",    "augment",         "max_translation",
                                      "max_rotation_deg", "alternating", "denominator_ema", "checkpoint_every", "regnet", "kldivnet"};
    for (const auto &[key, value] : j.items()) {
        if (!known.count(key)) throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
    if (j.contains("loss")) c.loss = parse_metric(j.at("loss").get<std::string>());
    c.lr = j.value("lr", c.lr);
    c.iterations = j.value("iterations", c.iterations);
    c.batch = j.value("batch", c.batch);
    c.smooth_weight = j.value("smooth_weight", c.smooth_weight);
    c.mi_bins = j.value("mi_bins", c.mi_bins);
    c.mi_sigma_bins = j.value("mi_sigma_bins", c.mi_sigma_bins);
    c.lncc_window = j.value("lncc_window", c.lncc_window);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.augmentation.max_translation = j.value("max_translation", c.augmentation.max_translation);
    c.augmentation.max_rotation_deg = j.value("max_rotation_deg", c.augmentation.max_rotation_deg);
    c.alternating = j.value("alternating", c.alternating);
    c.denominator_ema = j.value("denominator_ema", c.denominator_ema);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("regnet")) c.regnet = RegNetConfig::from_json(j.at("regnet"));
    if (j.contains("kldivnet")) c.kldivnet = KldivNetConfig::from_json(j.at("kldivnet"));
    c.validate();
    return c;
}

template <typename T>
TrainState<T> init_train_state(const TrainConfig &cfg) {
    cfg.validate();
    TrainState<T> s;
    s.regnet = init_regnet<T>(cfg.regnet, derive_seed(cfg.seed, 0, 10));
    s.regnet_ema = s.regnet;
    if (cfg.loss == Metric::dv) {
        s.critic = init_kldivnet<T>(cfg.kldivnet, derive_seed(cfg.seed, 0, 11));
        s.critic_ema = s.critic;
    }
    return s;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_batch(const std::vector<PairRecord> &pairs, const TrainConfig &cfg, Index it) {
    if (pairs.empty()) throw std::invalid_argument("train: no training pairs");
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(it), 1));
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    std::vector<Image> moving, fixed;
    for (Index b = 0; b < cfg.batch; ++b) {
        const PairRecord &p = pairs[pick(rng)];
        if (cfg.augment) {
            AugmentInput f{p.fixed, std::nullopt}, m{p.moving, std::nullopt};
            augment_pair(f, m, rng(), cfg.augmentation);
            fixed.push_back(std::move(f.image));
            moving.push_back(std::move(m.image));
        } else {
            fixed.push_back(p.fixed);
            moving.push_back(p.moving);
        }
    }
    return {stack_images<T>(moving), stack_images<T>(fixed)};
}

template <typename T>
StepGradients<T> loss_gradients(const TrainState<T> &state, const TrainConfig &cfg, const Tensor<T> &moving,
                                const Tensor<T> &fixed, Index it) {
    Tape<T> tape;
    BoundParams<T> reg(tape, state.regnet);
    BoundParams<T> crit(tape, state.critic);
    const Var<T> m = tape.constant(moving), f = tape.constant(fixed);
    const Var<T> field = regnet_forward(reg, cfg.regnet, m, f);
    const Var<T> moved = ops::warp(m, field);
    StepGradients<T> out;
    out.record.iteration = it;
    out.denominator = state.denominator;
    Var<T> loss;
    switch (cfg.loss) {
    case Metric::dv: {
        const DvTerms<T> s = dv_similarity(crit, cfg.kldivnet, moved, f, derive_seed(cfg.seed, static_cast<std::uint64_t>(it), 2),
                                           cfg.denominator_ema ? &out.denominator : nullptr);
        out.record.s_joint = static_cast<double>(s.joint.value().item());
        out.record.s_marginal = static_cast<double>(s.marginal.value().item());
        loss = ops::scale(s.similarity, T(-1));
        break;
    }
    case Metric::lncc: loss = ops::scale(ops::lncc(moved, f, cfg.lncc_window), T(-1)); break;
    case Metric::mi: loss = ops::scale(ops::mi_pwde(moved, f, cfg.mi_bins, cfg.mi_sigma_bins), T(-1)); break;
    case Metric::ssd: loss = ops::ssd(moved, f); break;
    }
    if (cfg.smooth_weight > 0.0) loss = ops::add(loss, ops::scale(ops::smoothness_penalty(field), static_cast<T>(cfg.smooth_weight)));
    out.record.loss = static_cast<double>(loss.value().item());
    double disp = 0.0;
    for (T v : field.value().values()) disp += std::abs(static_cast<double>(v));
    out.record.mean_abs_disp = disp / static_cast<double>(field.value().size());
    if (!std::isfinite(out.record.loss)) throw NonFiniteError("train: loss is not finite at iteration " + std::to_string(it));
    tape.backward(loss);
    out.regnet = reg.gradients();
    out.critic = crit.gradients();
    return out;
}

template <typename T>
void train_divregnet(const std::vector<PairRecord> &pairs, const TrainConfig &cfg, TrainState<T> &state,
                     const std::function<void(const TrainState<T> &)> &on_checkpoint) {
    cfg.validate();
    const AdamConfig adam{cfg.lr};
    while (state.iteration < cfg.iterations) {
        const Index it = state.iteration;
        auto [moving, fixed] = sample_batch<T>(pairs, cfg, it);
        StepGradients<T> g = loss_gradients(state, cfg, moving, fixed, it);
        const bool update_critic = cfg.loss == Metric::dv && (!cfg.alternating || it % 2 == 0);
        const bool update_regnet = cfg.loss != Metric::dv || !cfg.alternating || it % 2 == 1;
        if (update_regnet) adam_step(state.regnet, g.regnet, state.regnet_adam, adam);
        if (update_critic) adam_step(state.critic, g.critic, state.critic_adam, adam);
        if (!all_finite(state.regnet) || !all_finite(state.critic)) {
            throw NonFiniteError("train: parameters became non-finite at iteration " + std::to_string(it));
        }
        state.denominator = g.denominator;
        ema_update(state.regnet_ema, state.regnet, cfg.ema_decay);
        if (cfg.loss == Metric::dv) ema_update(state.critic_ema, state.critic, cfg.ema_decay);
        state.history.push_back(g.record);
        state.iteration = it + 1;
        if (on_checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) on_checkpoint(state);
    }
}

void write_train_history(const std::filesystem::path &path, const std::vector<TrainRecord> &history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "iteration,loss,S_joint_term,S_marg_term,mean_abs_disp\n";
    out.precision(17);
    for (const auto &r : history) out << r.iteration << ',' << r.loss << ',' << r.s_joint << ',' << r.s_marginal << ',' << r.mean_abs_disp << '\n';
}

std::vector<TrainRecord> read_train_history(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<TrainRecord> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        TrainRecord r;
        char comma;
        ss >> r.iteration >> comma >> r.loss >> comma >> r.s_joint >> comma >> r.s_marginal >> comma >> r.mean_abs_disp;
        if (!ss) throw std::runtime_error("malformed history row in " + path.string());
        out.push_back(r);
    }
    return out;
}

namespace {

template <typename T>
void put(ParamSet<double> &out, const std::string &prefix, const ParamSet<T> &p) {
    for (const auto &[name, t] : p) out[prefix + "/" + name] = t.template cast<double>();
}

template <typename T>
ParamSet<T> take(const ParamSet<double> &in, const std::string &prefix) {
    ParamSet<T> out;
    const std::string key = prefix + "/";
    for (const auto &[name, t] : in) {
        if (name.rfind(key, 0) == 0) out[name.substr(key.size())] = t.template cast<T>();
    }
    return out;
}

} // namespace

template <typename T>
void save_train_state(const std::filesystem::path &path, const TrainState<T> &state, const TrainConfig &cfg) {
    Checkpoint ck;
    ck.dtype = dtype_name<T>();
    put(ck.tensors, "regnet", state.regnet);
    put(ck.tensors, "regnet_ema", state.regnet_ema);
    put(ck.tensors, "critic", state.critic);
    put(ck.tensors, "critic_ema", state.critic_ema);
    export_adam(state.regnet_adam, "regnet_adam", ck.tensors, ck.meta);
    export_adam(state.critic_adam, "critic_adam", ck.tensors, ck.meta);
    ck.meta["kind"] = "train-state";
    ck.meta["iteration"] = state.iteration;
    ck.meta["denominator"] = state.denominator.to_json();
    ck.meta["config"] = cfg.to_json();
    save_checkpoint(path, ck);
}

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path &path, TrainConfig *cfg_out) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "train-state") throw std::runtime_error(path.string() + " is not a training state checkpoint");
    if (ck.dtype != dtype_name<T>()) throw std::runtime_error(path.string() + " holds " + ck.dtype + " values");
    TrainState<T> s;
    s.regnet = take<T>(ck.tensors, "regnet");
    s.regnet_ema = take<T>(ck.tensors, "regnet_ema");
    s.critic = take<T>(ck.tensors, "critic");
    s.critic_ema = take<T>(ck.tensors, "critic_ema");
    s.regnet_adam = import_adam<T>(ck.tensors, "regnet_adam", ck.meta);
    s.critic_adam = import_adam<T>(ck.tensors, "critic_adam", ck.meta);
    s.iteration = ck.meta.at("iteration").get<Index>();
    if (ck.meta.contains("denominator")) s.denominator = DenominatorEma::from_json(ck.meta.at("denominator"));
    if (cfg_out) *cfg_out = TrainConfig::from_json(ck.meta.at("config"));
    return s;
}

template <typename T>
void save_regnet(const std::filesystem::path &path, const ParamSet<T> &params, const RegNetConfig &cfg) {
    Checkpoint ck;
    ck.dtype = dtype_name<T>();
    ck.tensors = cast_params<double>(params);
    ck.meta["kind"] = "regnet";
    ck.meta["architecture"] = cfg.to_json();
    save_checkpoint(path, ck);
}

template <typename T>
ParamSet<T> load_regnet(const std::filesystem::path &path, RegNetConfig &cfg) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "regnet") throw std::runtime_error(path.string() + " is not a registration network checkpoint");
    cfg = RegNetConfig::from_json(ck.meta.at("architecture"));
    ParamSet<T> p = cast_params<T>(ck.tensors);
    const ParamSet<T> expected = init_regnet<T>(cfg, 0);
    for (const auto &[name, t] : expected) {
        auto it = p.find(name);
        if (it == p.end() || it->second.shape() != t.shape()) throw ShapeError(path.string() + ": tensor " + name + " missing or misshaped");
    }
    return p;
}

template <typename T>
void save_kldivnet(const std::filesystem::path &path, const ParamSet<T> &params, const KldivNetConfig &cfg) {
    Checkpoint ck;
    ck.dtype = dtype_name<T>();
    ck.tensors = cast_params<double>(params);
    ck.meta["kind"] = "kldivnet";
    ck.meta["architecture"] = cfg.to_json();
    save_checkpoint(path, ck);
}

template <typename T>
DisplacementField predict_field(const ParamSet<T> &params, const RegNetConfig &cfg, const Image &moving, const Image &fixed) {
    if (!moving.same_grid(fixed)) throw ShapeError("predict_field: moving and fixed grids differ");
    Tape<T> tape;
    BoundParams<T> p(tape, params, false);
    const Var<T> field = regnet_forward(p, cfg, tape.constant(to_tensor<T>(moving)), tape.constant(to_tensor<T>(fixed)));
    return field_from_tensor(field.value(), 0, fixed.spacing());
}

#define DIVREG_INSTANTIATE_TRAIN(T)                                                                                              \
    template TrainState<T> init_train_state<T>(const TrainConfig &);                                                             \
    template std::pair<Tensor<T>, Tensor<T>> sample_batch<T>(const std::vector<PairRecord> &, const TrainConfig &, Index);       \
    template StepGradients<T> loss_gradients(const TrainState<T> &, const TrainConfig &, const Tensor<T> &, const Tensor<T> &,   \
                                             Index);                                                                             \
    template void train_divregnet(const std::vector<PairRecord> &, const TrainConfig &, TrainState<T> &,                         \
                                  const std::function<void(const TrainState<T> &)> &);                                           \
    template void save_train_state(const std::filesystem::path &, const TrainState<T> &, const TrainConfig &);                  \
    template TrainState<T> load_train_state<T>(const std::filesystem::path &, TrainConfig *);                                    \
    template void save_regnet(const std::filesystem::path &, const ParamSet<T> &, const RegNetConfig &);                        \
    template ParamSet<T> load_regnet<T>(const std::filesystem::path &, RegNetConfig &);                                          \
    template void save_kldivnet(const std::filesystem::path &, const ParamSet<T> &, const KldivNetConfig &);                    \
    template DisplacementField predict_field(const ParamSet<T> &, const RegNetConfig &, const Image &, const Image &);

DIVREG_INSTANTIATE_TRAIN(float)
DIVREG_INSTANTIATE_TRAIN(double)

} // namespace divreg
