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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "json.hpp"

#include "divreg/augment.hpp"
#include "divreg/dataset.hpp"
#include "divreg/kldivnet.hpp"
#include "divreg/optim.hpp"
#include "divreg/regnet.hpp"
#include "divreg/register.hpp"

namespace divreg {

struct TrainConfig {
    Metric loss = Metric::dv;
    double lr = 1e-3;
    Index iterations = 10000;
    Index batch = 4;
    double smooth_weight = 0.0;
    int mi_bins = kDefaultMiBins;
    double mi_sigma_bins = kDefaultMiSigmaBins;
    Index lncc_window = kDefaultLnccWindow;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    bool augment = false;
    AugmentConfig augmentation;
    /// Update the critic on even and the registration network on odd
    /// iterations instead of both on every iteration.
    bool alternating = false;
    /// Bias-corrected marginal gradient for the neural loss (see DenominatorEma).
    bool denominator_ema = false;
    /// Periodic checkpoint interval in iterations; 0 disables it.
    Index checkpoint_every = 0;
    RegNetConfig regnet;
    KldivNetConfig kldivnet;

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json &j);
};

struct TrainRecord {
    Index iteration = 0;
    double loss = 0.0;
    double s_joint = 0.0;
    double s_marginal = 0.0;
    double mean_abs_disp = 0.0;
};

template <typename T>
struct TrainState {
    ParamSet<T> regnet, regnet_ema;
    ParamSet<T> critic, critic_ema;
    AdamState<T> regnet_adam, critic_adam;
    DenominatorEma denominator;
    /// Number of completed iterations.
    Index iteration = 0;
    std::vector<TrainRecord> history;
};

/// Fresh networks (critic only for the neural loss) with EMA copies.
template <typename T>
TrainState<T> init_train_state(const TrainConfig &cfg);

/// Batch of iteration `it`: (moving, fixed), each (batch, 1, S...). The pair
/// choice and augmentation depend only on (seed, it).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_batch(const std::vector<PairRecord> &pairs, const TrainConfig &cfg, Index it);

template <typename T>
struct StepGradients {
    TrainRecord record;
    ParamSet<T> regnet;
    ParamSet<T> critic;
    /// Denominator average after this batch (unchanged unless enabled).
    DenominatorEma denominator;
};

/// Loss of one batch and the gradients of both networks from a single
/// backward pass.
template <typename T>
StepGradients<T> loss_gradients(const TrainState<T> &state, const TrainConfig &cfg, const Tensor<T> &moving,
                                const Tensor<T> &fixed, Index it);

/// Runs iterations state.iteration .. cfg.iterations - 1. `on_checkpoint` is
/// called every cfg.checkpoint_every iterations. A non-finite loss throws
/// NonFiniteError and leaves `state` at the last good iteration.
template <typename T>
void train_divregnet(const std::vector<PairRecord> &pairs, const TrainConfig &cfg, TrainState<T> &state,
                     const std::function<void(const TrainState<T> &)> &on_checkpoint = {});

void write_train_history(const std::filesystem::path &path, const std::vector<TrainRecord> &history);
std::vector<TrainRecord> read_train_history(const std::filesystem::path &path);

/// Full resumable state in one checkpoint file (config echoed into the manifest).
template <typename T>
void save_train_state(const std::filesystem::path &path, const TrainState<T> &state, const TrainConfig &cfg);
template <typename T>
TrainState<T> load_train_state(const std::filesystem::path &path, TrainConfig *cfg_out = nullptr);

/// Registration network only, tagged with its architecture.
template <typename T>
void save_regnet(const std::filesystem::path &path, const ParamSet<T> &params, const RegNetConfig &cfg);
template <typename T>
ParamSet<T> load_regnet(const std::filesystem::path &path, RegNetConfig &cfg);

template <typename T>
void save_kldivnet(const std::filesystem::path &path, const ParamSet<T> &params, const KldivNetConfig &cfg);

/// Dense field predicted for one pair (no gradients recorded).
template <typename T>
DisplacementField predict_field(const ParamSet<T> &params, const RegNetConfig &cfg, const Image &moving, const Image &fixed);

} // namespace divreg
