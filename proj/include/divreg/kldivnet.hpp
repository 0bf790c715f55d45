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
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"

#include "divreg/grid.hpp"
#include "divreg/params.hpp"

namespace divreg {

/// Y-shaped critic: two pointwise branches (one per image), average pooling,
/// channel concatenation and a pointwise head ending in one channel.
struct KldivNetConfig {
    int rank = 2;
    std::vector<Index> branch_channels{16, 16};
    std::vector<Index> head_channels{32, 1};
    Index pool = 2;
    double leaky_slope = 0.2;

    void validate() const;
    nlohmann::json to_json() const;
    static KldivNetConfig from_json(const nlohmann::json &j);
};

/// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
/// Names: "branch_a.<i>.w/b", "branch_b.<i>.w/b", "head.<i>.w/b".
template <typename T>
ParamSet<T> init_kldivnet(const KldivNetConfig &cfg, std::uint64_t seed);

/// Stack of 1x1 convolutions with leaky ReLU between layers. The last layer
/// is followed by an activation only when `activate_last` is set.
template <typename T>
Var<T> pointwise_stack(const BoundParams<T> &p, const std::string &prefix, std::size_t layers, const Var<T> &x,
                       double slope, bool activate_last);

/// One branch before pooling: (N, 1, S...) -> (N, C, S...).
template <typename T>
Var<T> branch_features(const BoundParams<T> &p, const KldivNetConfig &cfg, const std::string &branch, const Var<T> &x);

/// Critic map Z over the pooled grid: (N, 1, S/pool...).
template <typename T>
Var<T> kldivnet_forward(const BoundParams<T> &p, const KldivNetConfig &cfg, const Var<T> &moved, const Var<T> &fixed);

/// One uniformly random permutation of [0, voxels) per sample.
std::vector<std::vector<Index>> voxel_permutations(Index batch, Index voxels, std::uint64_t seed);
Image shuffle_voxels(const Image &img, std::uint64_t seed);
/// Permutations of the voxels of `spatial` that move whole block^rank cells
/// and keep the offset inside each cell. With block 1 this is
/// voxel_permutations with the same seed.
std::vector<std::vector<Index>> block_permutations(Index batch, const Shape &spatial, Index block, std::uint64_t seed);

template <typename T>
struct DvTerms {
    Var<T> similarity;  // joint - marginal
    Var<T> joint;       // mean of Z(moved, fixed)
    Var<T> marginal;    // log-mean-exp of Z(moved, shuffled fixed)
};

/// Moving average of E[exp(Z)] over steps, kept as a logarithm. When passed
/// to dv_similarity, the marginal term keeps its log-mean-exp value but its
/// gradient divides by the averaged denominator instead of the batch one,
/// which removes most of the minibatch bias of the raw gradient.
struct DenominatorEma {
    double rate = 0.01;
    bool started = false;
    double log_mean = 0.0;

    /// Folds in one batch value of log E[exp(Z)].
    void update(double log_mean_exp);
    nlohmann::json to_json() const;
    static DenominatorEma from_json(const nlohmann::json &j);
};

/// log_mean_exp(z) in value; gradient of mean(exp(z)) / exp(ema.log_mean)
/// after folding the batch into `ema`.
template <typename T>
Var<T> corrected_log_mean_exp(const Var<T> &z, DenominatorEma &ema);

/// Neural similarity of a registered pair. The marginal pass shuffles whole
/// pooling cells of the fixed image per sample with permutations drawn from
/// `seed`. A non-null `denominator` switches to the corrected marginal gradient.
template <typename T>
DvTerms<T> dv_similarity(const BoundParams<T> &p, const KldivNetConfig &cfg, const Var<T> &moved, const Var<T> &fixed,
                         std::uint64_t seed, DenominatorEma *denominator = nullptr);

struct EstimatorConfig {
    std::vector<Index> channels{64, 64, 1};
    double lr = 1e-3;
    Index steps = 3000;
    Index batch = 512;
    std::uint64_t seed = 0;
    double leaky_slope = 0.2;
    double ema_decay = 0.99;
    /// Bias-corrected marginal gradient (see DenominatorEma).
    bool denominator_ema = false;

    void validate() const;
    nlohmann::json to_json() const;
    static EstimatorConfig from_json(const nlohmann::json &j);
};

struct DvRecord {
    Index step = 0;
    double similarity = 0.0;
    double joint = 0.0;
    double marginal = 0.0;
};

void write_dv_history(const std::filesystem::path &path, const std::vector<DvRecord> &history);

/// Yields (moved, fixed) batches shaped (N, 1, S...) for a given step.
template <typename T>
using PairSampler = std::function<std::pair<Tensor<T>, Tensor<T>>(Index step)>;

template <typename T>
struct EstimatorRun {
    ParamSet<T> raw;
    ParamSet<T> ema;
    std::vector<DvRecord> history;
};

/// Maximises the neural similarity over the critic with Adam, starting from
/// `init` (or a fresh network when empty). Throws NonFiniteError on a
/// non-finite objective.
template <typename T>
EstimatorRun<T> train_estimator(const PairSampler<T> &sampler, const KldivNetConfig &net, const EstimatorConfig &cfg,
                                ParamSet<T> init = {});

/// Row-major sample matrix, one vector of `dim` reals per row.
struct Samples {
    Index count = 0;
    Index dim = 0;
    std::vector<double> values;

    double at(Index row, Index col) const { return values[static_cast<std::size_t>(row * dim + col)]; }
};

class DegenerateSamplesError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Samples load_samples_csv(const std::filesystem::path &path);
void save_samples_csv(const std::filesystem::path &path, const Samples &s);

/// Pairs the first `split` columns of each row with the remaining columns of
/// a randomly chosen row, giving samples of the product of the two marginals.
Samples product_of_marginals(const Samples &joint, Index split, std::uint64_t seed);

struct KlEstimate {
    double estimate = 0.0;
    std::vector<double> history;  // minibatch bound per step
};

/// Sample-based lower bound on KL(mu || lam): a pointwise network is trained
/// on minibatches and the bound is evaluated on all samples with the
/// averaged parameters. Needs at least 64 samples per side.
template <typename T>
KlEstimate estimate_kl(const Samples &mu, const Samples &lam, const EstimatorConfig &cfg);

} // namespace divreg
