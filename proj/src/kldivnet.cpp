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

#include "divreg/kldivnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "divreg/ops.hpp"
#include "divreg/optim.hpp"
#include "divreg/seed.hpp"

namespace divreg {

namespace {

Shape pointwise_kernel(Index co, Index ci, int rank) {
    Shape s{co, ci};
    s.insert(s.end(), static_cast<std::size_t>(rank), 1);
    return s;
}

template <typename T>
void init_stack(ParamSet<T> &p, const std::string &prefix, Index in, const std::vector<Index> &widths, int rank,
                std::mt19937_64 &rng) {
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor<T> w(pointwise_kernel(widths[i], in, rank));
        Tensor<T> b(Shape{widths[i]});
        for (Index k = 0; k < w.size(); ++k) w[k] = static_cast<T>(u(rng));
        for (Index k = 0; k < b.size(); ++k) b[k] = static_cast<T>(u(rng));
        p[prefix + "." + std::to_string(i) + ".w"] = std::move(w);
        p[prefix + "." + std::to_string(i) + ".b"] = std::move(b);
        in = widths[i];
    }
}

void check_widths(const std::vector<Index> &w, const char *what) {
    if (w.empty()) throw std::invalid_argument(std::string(what) + ": at least one layer required");
    for (Index c : w) {
        if (c < 1) throw std::invalid_argument(std::string(what) + ": channel counts must be positive");
    }
}

} // namespace

void KldivNetConfig::validate() const {
    if (rank < 1 || rank > 3) throw std::invalid_argument("kldivnet: rank must be 1, 2 or 3");
    check_widths(branch_channels, "kldivnet branch");
    check_widths(head_channels, "kldivnet head");
    if (head_channels.back() != 1) throw std::invalid_argument("kldivnet: head must end in one channel");
    if (pool < 1) throw std::invalid_argument("kldivnet: pool factor must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("kldivnet: leaky slope must lie in (0, 1)");
}

nlohmann::json KldivNetConfig::to_json() const {
    return {{"rank", rank}, {"branch_channels", branch_channels}, {"head_channels", head_channels}, {"pool", pool}, {"leaky_slope", leaky_slope}};
}

KldivNetConfig KldivNetConfig::from_json(const nlohmann::json &j) {
    KldivNetConfig c;
    c.rank = j.value("rank", c.rank);
    c.branch_channels = j.value("branch_channels", c.branch_channels);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.pool = j.value("pool", c.pool);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
}

template <typename T>
ParamSet<T> init_kldivnet(const KldivNetConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParamSet<T> p;
    init_stack(p, "branch_a", 1, cfg.branch_channels, cfg.rank, rng);
    init_stack(p, "branch_b", 1, cfg.branch_channels, cfg.rank, rng);
    init_stack(p, "head", 2 * cfg.branch_channels.back(), cfg.head_channels, cfg.rank, rng);
    return p;
}

template <typename T>
Var<T> pointwise_stack(const BoundParams<T> &p, const std::string &prefix, std::size_t layers, const Var<T> &x,
                       double slope, bool activate_last) {
    Var<T> h = x;
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string k = prefix + "." + std::to_string(i);
        h = ops::conv(h, p[k + ".w"], p[k + ".b"]);
        if (i + 1 < layers || activate_last) h = ops::leaky_relu(h, static_cast<T>(slope));
    }
    return h;
}

template <typename T>
Var<T> branch_features(const BoundParams<T> &p, const KldivNetConfig &cfg, const std::string &branch, const Var<T> &x) {
    return pointwise_stack(p, branch, cfg.branch_channels.size(), x, cfg.leaky_slope, true);
}

template <typename T>
Var<T> kldivnet_forward(const BoundParams<T> &p, const KldivNetConfig &cfg, const Var<T> &moved, const Var<T> &fixed) {
    if (moved.shape() != fixed.shape()) {
        throw ShapeError("kldivnet: moved " + shape_string(moved.shape()) + " and fixed " + shape_string(fixed.shape()) + " differ");
    }
    if (moved.shape().size() != static_cast<std::size_t>(cfg.rank) + 2 || moved.shape()[1] != 1) {
        throw ShapeError("kldivnet: expected (N, 1, S...) of rank " + std::to_string(cfg.rank) + ", got " + shape_string(moved.shape()));
    }
    for (std::size_t a = 2; a < moved.shape().size(); ++a) {
        if (moved.shape()[a] % cfg.pool != 0) throw ShapeError("kldivnet: spatial extents must be divisible by the pool factor");
    }
    Var<T> fa = branch_features(p, cfg, "branch_a", moved);
    Var<T> fb = branch_features(p, cfg, "branch_b", fixed);
    if (cfg.pool > 1) {
        fa = ops::avg_pool(fa, cfg.pool);
        fb = ops::avg_pool(fb, cfg.pool);
    }
    return pointwise_stack(p, "head", cfg.head_channels.size(), ops::concat_channels<T>({fa, fb}), cfg.leaky_slope, false);
}

std::vector<std::vector<Index>> voxel_permutations(Index batch, Index voxels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<Index>> perms(static_cast<std::size_t>(batch));
    for (auto &perm : perms) {
        perm.resize(static_cast<std::size_t>(voxels));
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
    }
    return perms;
}

Image shuffle_voxels(const Image &img, std::uint64_t seed) {
    const auto perm = voxel_permutations(1, img.size(), seed).front();
    std::vector<float> out(static_cast<std::size_t>(img.size()));
    for (Index i = 0; i < img.size(); ++i) out[static_cast<std::size_t>(i)] = img[perm[static_cast<std::size_t>(i)]];
    return Image(img.dims(), img.spacing(), std::move(out));
}

std::vector<std::vector<Index>> block_permutations(Index batch, const Shape &spatial, Index block, std::uint64_t seed) {
    Shape cells = spatial;
    for (Index &c : cells) {
        if (c % block != 0) throw ShapeError("block permutation: extents must be divisible by the block size");
        c /= block;
    }
    auto perms = voxel_permutations(batch, shape_size(cells), seed);
    if (block == 1) return perms;
    const Index voxels = shape_size(spatial);
    const int rank = static_cast<int>(spatial.size());
    for (auto &perm : perms) {
        std::vector<Index> full(static_cast<std::size_t>(voxels));
        for (Index v = 0; v < voxels; ++v) {
            const auto coord = unravel(v, spatial);
            Index cell = 0;
            for (int a = 0; a < rank; ++a) cell = cell * cells[a] + coord[a] / block;
            const auto src_cell = unravel(perm[static_cast<std::size_t>(cell)], cells);
            Index src = 0;
            for (int a = 0; a < rank; ++a) src = src * spatial[a] + src_cell[a] * block + coord[a] % block;
            full[static_cast<std::size_t>(v)] = src;
        }
        perm = std::move(full);
    }
    return perms;
}

void DenominatorEma::update(double log_mean_exp) {
    if (!started) {
        log_mean = log_mean_exp;
        started = true;
        return;
    }
    const double a = std::log1p(-rate) + log_mean, b = std::log(rate) + log_mean_exp;
    const double hi = std::max(a, b);
    log_mean = hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

nlohmann::json DenominatorEma::to_json() const { return {{"rate", rate}, {"started", started}, {"log_mean", log_mean}}; }

DenominatorEma DenominatorEma::from_json(const nlohmann::json &j) {
    DenominatorEma e;
    e.rate = j.value("rate", e.rate);
    e.started = j.value("started", e.started);
    e.log_mean = j.value("log_mean", e.log_mean);
    return e;
}

template <typename T>
Var<T> corrected_log_mean_exp(const Var<T> &z, DenominatorEma &ema) {
    if (!(ema.rate > 0.0 && ema.rate <= 1.0)) throw std::invalid_argument("denominator ema: rate must lie in (0, 1]");
    double hi = -std::numeric_limits<double>::infinity(), sum = 0.0;
    for (T v : z.value().values()) hi = std::max(hi, static_cast<double>(v));
    for (T v : z.value().values()) sum += std::exp(static_cast<double>(v) - hi);
    const double value = hi + std::log(sum / static_cast<double>(z.value().size()));
    ema.update(value);
    const Var<T> ratio = ops::reduce_mean(ops::exp(ops::add_scalar(z, static_cast<T>(-ema.log_mean))));
    return ops::add_scalar(ratio, static_cast<T>(value - static_cast<double>(ratio.value().item())));
}

template <typename T>
DvTerms<T> dv_similarity(const BoundParams<T> &p, const KldivNetConfig &cfg, const Var<T> &moved, const Var<T> &fixed,
                         std::uint64_t seed, DenominatorEma *denominator) {
    const Tensor<T> &f = fixed.value();
    // Shuffle whole pooling cells: the critic scores pooled patches, so the
    // marginal pass must pair intact patches drawn independently.
    const Var<T> shuffled = ops::permute_spatial(fixed, block_permutations(f.batch(), f.spatial_shape(), cfg.pool, seed));
    DvTerms<T> out;
    out.joint = ops::reduce_mean(kldivnet_forward(p, cfg, moved, fixed));
    const Var<T> scores = kldivnet_forward(p, cfg, moved, shuffled);
    out.marginal = denominator ? corrected_log_mean_exp(scores, *denominator) : ops::log_mean_exp(scores);
    out.similarity = ops::sub(out.joint, out.marginal);
    return out;
}

void EstimatorConfig::validate() const {
    check_widths(channels, "estimator");
    if (channels.back() != 1) throw std::invalid_argument("estimator: last layer must have one channel");
    if (!(lr > 0.0)) throw std::invalid_argument("estimator: lr must be positive");
    if (steps < 1) throw std::invalid_argument("estimator: steps must be >= 1");
    if (batch < 1) throw std::invalid_argument("estimator: batch must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("estimator: leaky slope must lie in (0, 1)");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("estimator: ema_decay must lie in [0, 1)");
}

nlohmann::json EstimatorConfig::to_json() const {
    return {{"channels", channels}, {"lr", lr},     {"steps", steps},          {"batch", batch},
            {"seed", seed},         {"leaky_slope", leaky_slope}, {"ema_decay", ema_decay}, {"denominator_ema", denominator_ema}};
}

EstimatorConfig EstimatorConfig::from_json(const nlohmann::json &j) {
    EstimatorConfig c;
    c.channels = j.value("channels", c.channels);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.denominator_ema = j.value("denominator_ema", c.denominator_ema);
    c.validate();
    return c;
}

void write_dv_history(const std::filesystem::path &path, const std::vector<DvRecord> &history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step,S,joint_term,marginal_term\n";
    out.precision(17);
    for (const auto &r : history) out << r.step << ',' << r.similarity << ',' << r.joint << ',' << r.marginal << '\n';
}

template <typename T>
EstimatorRun<T> train_estimator(const PairSampler<T> &sampler, const KldivNetConfig &net, const EstimatorConfig &cfg,
                                ParamSet<T> init) {
    cfg.validate();
    net.validate();
    EstimatorRun<T> run;
    run.raw = init.empty() ? init_kldivnet<T>(net, cfg.seed) : std::move(init);
    ema_update(run.ema, run.raw, cfg.ema_decay);
    AdamState<T> adam;
    const AdamConfig acfg{cfg.lr};
    DenominatorEma denominator;
    for (Index step = 0; step < cfg.steps; ++step) {
        auto [moved, fixed] = sampler(step);
        Tape<T> tape;
        BoundParams<T> bound(tape, run.raw);
        const Var<T> m = tape.constant(std::move(moved));
        const Var<T> f = tape.constant(std::move(fixed));
        const DvTerms<T> s = dv_similarity(bound, net, m, f, derive_seed(cfg.seed, static_cast<std::uint64_t>(step)),
                                           cfg.denominator_ema ? &denominator : nullptr);
        const Var<T> loss = ops::scale(s.similarity, T(-1));
        if (!std::isfinite(loss.value().item())) throw NonFiniteError("estimator objective is not finite at step " + std::to_string(step));
        tape.backward(loss);
        adam_step(run.raw, bound.gradients(), adam, acfg);
        ema_update(run.ema, run.raw, cfg.ema_decay);
        run.history.push_back({step, static_cast<double>(s.similarity.value().item()), static_cast<double>(s.joint.value().item()),
                               static_cast<double>(s.marginal.value().item())});
    }
    return run;
}

Samples load_samples_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open samples file " + path.string());
    Samples s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception &) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (s.count == 0) continue;  // header row
            throw std::runtime_error("non-numeric value in " + path.string());
        }
        if (s.count == 0) s.dim = static_cast<Index>(row.size());
        if (static_cast<Index>(row.size()) != s.dim) throw std::runtime_error("ragged rows in " + path.string());
        s.values.insert(s.values.end(), row.begin(), row.end());
        ++s.count;
    }
    return s;
}

void save_samples_csv(const std::filesystem::path &path, const Samples &s) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    for (Index r = 0; r < s.count; ++r) {
        for (Index c = 0; c < s.dim; ++c) out << (c ? "," : "") << s.at(r, c);
        out << '\n';
    }
}

Samples product_of_marginals(const Samples &joint, Index split, std::uint64_t seed) {
    if (split < 1 || split >= joint.dim) throw std::invalid_argument("product_of_marginals: split must lie in [1, dim)");
    const auto perm = voxel_permutations(1, joint.count, seed).front();
    Samples out = joint;
    for (Index r = 0; r < joint.count; ++r)
        for (Index c = split; c < joint.dim; ++c) out.values[static_cast<std::size_t>(r * joint.dim + c)] = joint.at(perm[static_cast<std::size_t>(r)], c);
    return out;
}

namespace {

void check_samples(const Samples &s, const char *which) {
    if (s.count < 64) throw std::invalid_argument(std::string("estimate_kl: ") + which + " needs at least 64 samples");
    if (s.dim < 1 || static_cast<Index>(s.values.size()) != s.count * s.dim) throw std::invalid_argument("estimate_kl: malformed sample matrix");
    for (double v : s.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("estimate_kl: non-finite sample");
    }
    for (Index r = 1; r < s.count; ++r)
        for (Index c = 0; c < s.dim; ++c)
            if (s.at(r, c) != s.at(0, c)) return;
    throw DegenerateSamplesError(std::string("estimate_kl: all ") + which + " samples are identical");
}

// (1, dim, rows) tensor of standardised samples.
template <typename T>
Tensor<T> sample_tensor(const Samples &s, const std::vector<Index> &rows, const std::vector<double> &mean,
                        const std::vector<double> &inv_std) {
    const Index n = static_cast<Index>(rows.size());
    Tensor<T> t(Shape{1, s.dim, n});
    for (Index c = 0; c < s.dim; ++c)
        for (Index i = 0; i < n; ++i) {
            t[c * n + i] = static_cast<T>((s.at(rows[static_cast<std::size_t>(i)], c) - mean[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)]);
        }
    return t;
}

template <typename T>
double full_bound(const ParamSet<T> &params, const EstimatorConfig &cfg, const Tensor<T> &mu, const Tensor<T> &lam) {
    Tape<T> tape;
    BoundParams<T> p(tape, params, false);
    const Var<T> tm = pointwise_stack(p, "critic", cfg.channels.size(), tape.constant(mu), cfg.leaky_slope, false);
    const Var<T> tl = pointwise_stack(p, "critic", cfg.channels.size(), tape.constant(lam), cfg.leaky_slope, false);
    return static_cast<double>(ops::reduce_mean(tm).value().item()) - static_cast<double>(ops::log_mean_exp(tl).value().item());
}

} // namespace

template <typename T>
KlEstimate estimate_kl(const Samples &mu, const Samples &lam, const EstimatorConfig &cfg) {
    cfg.validate();
    check_samples(mu, "mu");
    check_samples(lam, "lam");
    if (mu.dim != lam.dim) throw ShapeError("estimate_kl: sample dimensions differ");
    const Index d = mu.dim;

    // Standardise with pooled statistics; a shared affine map leaves KL unchanged.
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0), inv_std(static_cast<std::size_t>(d), 1.0);
    const double total = static_cast<double>(mu.count + lam.count);
    for (Index c = 0; c < d; ++c) {
        double s = 0.0, ss = 0.0;
        for (const Samples *set : {&mu, &lam})
            for (Index r = 0; r < set->count; ++r) s += set->at(r, c);
        const double m = s / total;
        for (const Samples *set : {&mu, &lam})
            for (Index r = 0; r < set->count; ++r) ss += (set->at(r, c) - m) * (set->at(r, c) - m);
        const double sd = std::sqrt(ss / total);
        mean[static_cast<std::size_t>(c)] = m;
        inv_std[static_cast<std::size_t>(c)] = sd > 0.0 ? 1.0 / sd : 1.0;
    }

    std::mt19937_64 rng(cfg.seed);
    ParamSet<T> raw;
    init_stack(raw, "critic", d, cfg.channels, 1, rng);
    ParamSet<T> ema;
    ema_update(ema, raw, cfg.ema_decay);
    AdamState<T> adam;
    const AdamConfig acfg{cfg.lr};
    std::uniform_int_distribution<Index> pick_mu(0, mu.count - 1), pick_lam(0, lam.count - 1);
    std::vector<Index> rows_mu(static_cast<std::size_t>(cfg.batch)), rows_lam(rows_mu.size());
    DenominatorEma denominator;
    KlEstimate out;
    for (Index step = 0; step < cfg.steps; ++step) {
        for (auto &r : rows_mu) r = pick_mu(rng);
        for (auto &r : rows_lam) r = pick_lam(rng);
        Tape<T> tape;
        BoundParams<T> p(tape, raw);
        const Var<T> tm = pointwise_stack(p, "critic", cfg.channels.size(), tape.constant(sample_tensor<T>(mu, rows_mu, mean, inv_std)),
                                          cfg.leaky_slope, false);
        const Var<T> tl = pointwise_stack(p, "critic", cfg.channels.size(), tape.constant(sample_tensor<T>(lam, rows_lam, mean, inv_std)),
                                          cfg.leaky_slope, false);
        const Var<T> bound = ops::sub(ops::reduce_mean(tm), cfg.denominator_ema ? corrected_log_mean_exp(tl, denominator) : ops::log_mean_exp(tl));
        if (!std::isfinite(bound.value().item())) throw NonFiniteError("estimate_kl: bound is not finite at step " + std::to_string(step));
        tape.backward(ops::scale(bound, T(-1)));
        adam_step(raw, p.gradients(), adam, acfg);
        ema_update(ema, raw, cfg.ema_decay);
        out.history.push_back(static_cast<double>(bound.value().item()));
    }
    std::vector<Index> all_mu(static_cast<std::size_t>(mu.count)), all_lam(static_cast<std::size_t>(lam.count));
    std::iota(all_mu.begin(), all_mu.end(), Index{0});
    std::iota(all_lam.begin(), all_lam.end(), Index{0});
    out.estimate = full_bound(ema, cfg, sample_tensor<T>(mu, all_mu, mean, inv_std), sample_tensor<T>(lam, all_lam, mean, inv_std));
    return out;
}

#define DIVREG_INSTANTIATE_KLDIVNET(T)                                                                                         \
    template ParamSet<T> init_kldivnet<T>(const KldivNetConfig &, std::uint64_t);                                              \
    template Var<T> pointwise_stack(const BoundParams<T> &, const std::string &, std::size_t, const Var<T> &, double, bool);    \
    template Var<T> branch_features(const BoundParams<T> &, const KldivNetConfig &, const std::string &, const Var<T> &);       \
    template Var<T> kldivnet_forward(const BoundParams<T> &, const KldivNetConfig &, const Var<T> &, const Var<T> &);          \
    template Var<T> corrected_log_mean_exp(const Var<T> &, DenominatorEma &);                                                 \
    template DvTerms<T> dv_similarity(const BoundParams<T> &, const KldivNetConfig &, const Var<T> &, const Var<T> &,          \
                                      std::uint64_t, DenominatorEma *);                                                        \
    template EstimatorRun<T> train_estimator(const PairSampler<T> &, const KldivNetConfig &, const EstimatorConfig &, ParamSet<T>); \
    template KlEstimate estimate_kl<T>(const Samples &, const Samples &, const EstimatorConfig &);

DIVREG_INSTANTIATE_KLDIVNET(float)
DIVREG_INSTANTIATE_KLDIVNET(double)

} // namespace divreg
