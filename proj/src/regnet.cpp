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

#include "divreg/regnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "divreg/ops.hpp"

namespace divreg {

namespace ops {

namespace {

template <typename T>
void softmax3(const Tensor<T> &logits, double w[3]) {
    const double m = std::max({static_cast<double>(logits[0]), static_cast<double>(logits[1]), static_cast<double>(logits[2])});
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += (w[k] = std::exp(static_cast<double>(logits[k]) - m));
    for (int k = 0; k < 3; ++k) w[k] /= z;
}

// Per-(n, c) statistics and the mixed moments used by the forward pass.
struct SnStats {
    Index n = 0, c = 0, s = 0;
    double wm[3] = {}, wv[3] = {};
    std::vector<double> mu_in, v_in;   // (N, C)
    std::vector<double> mu_ln, v_ln;   // (N)
    std::vector<double> mu_bn, v_bn;   // (C)
    std::vector<double> mu_hat, r;     // (N, C); r = 1 / sqrt(v_hat + eps)
};

template <typename T>
SnStats sn_stats(const Tensor<T> &x, const Tensor<T> &ml, const Tensor<T> &vl, double eps) {
    SnStats st;
    st.n = x.batch();
    st.c = x.channels();
    st.s = x.spatial_size();
    softmax3(ml, st.wm);
    softmax3(vl, st.wv);
    const auto N = static_cast<std::size_t>(st.n), C = static_cast<std::size_t>(st.c);
    st.mu_in.assign(N * C, 0.0);
    st.v_in.assign(N * C, 0.0);
    for (std::size_t i = 0; i < N * C; ++i) {
        const T *p = x.data() + static_cast<Index>(i) * st.s;
        double sum = 0.0;
        for (Index k = 0; k < st.s; ++k) sum += p[k];
        const double mu = sum / static_cast<double>(st.s);
        double ss = 0.0;
        for (Index k = 0; k < st.s; ++k) ss += (p[k] - mu) * (p[k] - mu);
        st.mu_in[i] = mu;
        st.v_in[i] = ss / static_cast<double>(st.s);
    }
    st.mu_ln.assign(N, 0.0);
    st.v_ln.assign(N, 0.0);
    st.mu_bn.assign(C, 0.0);
    st.v_bn.assign(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            st.mu_ln[n] += st.mu_in[n * C + c] / static_cast<double>(C);
            st.mu_bn[c] += st.mu_in[n * C + c] / static_cast<double>(N);
        }
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double dl = st.mu_in[n * C + c] - st.mu_ln[n];
            const double db = st.mu_in[n * C + c] - st.mu_bn[c];
            st.v_ln[n] += (st.v_in[n * C + c] + dl * dl) / static_cast<double>(C);
            st.v_bn[c] += (st.v_in[n * C + c] + db * db) / static_cast<double>(N);
        }
    st.mu_hat.assign(N * C, 0.0);
    st.r.assign(N * C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = n * C + c;
            st.mu_hat[i] = st.wm[0] * st.mu_in[i] + st.wm[1] * st.mu_ln[n] + st.wm[2] * st.mu_bn[c];
            const double v = st.wv[0] * st.v_in[i] + st.wv[1] * st.v_ln[n] + st.wv[2] * st.v_bn[c];
            st.r[i] = 1.0 / std::sqrt(v + eps);
        }
    return st;
}

} // namespace

template <typename T>
Var<T> switchable_norm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta, const Var<T> &mean_logits,
                       const Var<T> &var_logits, double eps) {
    const Tensor<T> &xv = x.value();
    if (xv.ndim() < 3) throw ShapeError("switchable_norm: expected (N, C, S...)");
    const Index C = xv.channels();
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) throw ShapeError("switchable_norm: gamma/beta must have shape [C]");
    if (mean_logits.shape() != Shape{3} || var_logits.shape() != Shape{3}) throw ShapeError("switchable_norm: logits must have shape [3]");
    const SnStats st = sn_stats(xv, mean_logits.value(), var_logits.value(), eps);
    Tensor<T> y(xv.shape());
    for (Index i = 0; i < st.n * st.c; ++i) {
        const Index c = i % st.c;
        const double mu = st.mu_hat[static_cast<std::size_t>(i)], r = st.r[static_cast<std::size_t>(i)];
        const double g = gamma.value()[c], b = beta.value()[c];
        const T *xp = xv.data() + i * st.s;
        T *yp = y.data() + i * st.s;
        for (Index k = 0; k < st.s; ++k) yp[k] = static_cast<T>(g * (xp[k] - mu) * r + b);
    }
    const int ix = x.id(), ig = gamma.id(), ib = beta.id(), iml = mean_logits.id(), ivl = var_logits.id();
    return x.tape().record("switchable_norm", std::move(y), {x, gamma, beta, mean_logits, var_logits},
        [st, ix, ig, ib, iml, ivl](Tape<T> &t, const Tensor<T> &, const Tensor<T> &gy) {
            const Tensor<T> &xv = t.value(ix);
            const Tensor<T> &gv = t.value(ig);
            const auto N = static_cast<std::size_t>(st.n), C = static_cast<std::size_t>(st.c);
            const double S = static_cast<double>(st.s);
            std::vector<double> g_gamma(C, 0.0), g_beta(C, 0.0), g_muhat(N * C, 0.0), g_vhat(N * C, 0.0);
            for (std::size_t i = 0; i < N * C; ++i) {
                const std::size_t c = i % C;
                const double mu = st.mu_hat[i], r = st.r[i], g = gv[static_cast<Index>(c)];
                const T *xp = xv.data() + static_cast<Index>(i) * st.s;
                const T *gp = gy.data() + static_cast<Index>(i) * st.s;
                double sg = 0.0, sgd = 0.0;
                for (Index k = 0; k < st.s; ++k) {
                    sg += gp[k];
                    sgd += gp[k] * (xp[k] - mu);
                }
                g_beta[c] += sg;
                g_gamma[c] += sgd * r;
                g_muhat[i] = -g * r * sg;
                g_vhat[i] = -0.5 * g * r * r * r * sgd;
            }
            // Chain through the layer and batch pools to the instance moments.
            std::vector<double> g_mu_ln(N, 0.0), g_v_ln(N, 0.0), g_mu_bn(C, 0.0), g_v_bn(C, 0.0);
            double g_wm[3] = {}, g_wv[3] = {};
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t i = n * C + c;
                    g_mu_ln[n] += st.wm[1] * g_muhat[i];
                    g_mu_bn[c] += st.wm[2] * g_muhat[i];
                    g_v_ln[n] += st.wv[1] * g_vhat[i];
                    g_v_bn[c] += st.wv[2] * g_vhat[i];
                    g_wm[0] += g_muhat[i] * st.mu_in[i];
                    g_wm[1] += g_muhat[i] * st.mu_ln[n];
                    g_wm[2] += g_muhat[i] * st.mu_bn[c];
                    g_wv[0] += g_vhat[i] * st.v_in[i];
                    g_wv[1] += g_vhat[i] * st.v_ln[n];
                    g_wv[2] += g_vhat[i] * st.v_bn[c];
                }
            if (t.requires_grad(ix)) {
                T *gx = t.grad_buffer(ix).data();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t i = n * C + c;
                        const double g_mu_in = st.wm[0] * g_muhat[i] + g_mu_ln[n] / static_cast<double>(C) +
                                               g_mu_bn[c] / static_cast<double>(N) +
                                               g_v_ln[n] * 2.0 * (st.mu_in[i] - st.mu_ln[n]) / static_cast<double>(C) +
                                               g_v_bn[c] * 2.0 * (st.mu_in[i] - st.mu_bn[c]) / static_cast<double>(N);
                        const double g_v_in = st.wv[0] * g_vhat[i] + g_v_ln[n] / static_cast<double>(C) + g_v_bn[c] / static_cast<double>(N);
                        const double r = st.r[i], g = gv[static_cast<Index>(c)], mu = st.mu_in[i];
                        const T *xp = xv.data() + static_cast<Index>(i) * st.s;
                        const T *gp = gy.data() + static_cast<Index>(i) * st.s;
                        T *gxp = gx + static_cast<Index>(i) * st.s;
                        const double a = g_mu_in / S, b = 2.0 * g_v_in / S;
                        for (Index k = 0; k < st.s; ++k) gxp[k] += static_cast<T>(gp[k] * g * r + a + b * (xp[k] - mu));
                    }
            }
            if (t.requires_grad(ig)) {
                Tensor<T> &gg = t.grad_buffer(ig);
                for (std::size_t c = 0; c < C; ++c) gg[static_cast<Index>(c)] += static_cast<T>(g_gamma[c]);
            }
            if (t.requires_grad(ib)) {
                Tensor<T> &gb = t.grad_buffer(ib);
                for (std::size_t c = 0; c < C; ++c) gb[static_cast<Index>(c)] += static_cast<T>(g_beta[c]);
            }
            auto softmax_back = [&](int id, const double w[3], const double gw[3]) {
                if (!t.requires_grad(id)) return;
                const double dot = w[0] * gw[0] + w[1] * gw[1] + w[2] * gw[2];
                Tensor<T> &gl = t.grad_buffer(id);
                for (int k = 0; k < 3; ++k) gl[k] += static_cast<T>(w[k] * (gw[k] - dot));
            };
            softmax_back(iml, st.wm, g_wm);
            softmax_back(ivl, st.wv, g_wv);
        });
}

template Var<float> switchable_norm(const Var<float> &, const Var<float> &, const Var<float> &, const Var<float> &,
                                    const Var<float> &, double);
template Var<double> switchable_norm(const Var<double> &, const Var<double> &, const Var<double> &, const Var<double> &,
                                     const Var<double> &, double);

} // namespace ops

template <typename T>
Var<T> se_block(const BoundParams<T> &p, const std::string &prefix, const Var<T> &x) {
    Var<T> s = ops::global_avg_pool(x);
    s = ops::relu(ops::linear(s, p[prefix + ".w1"], p[prefix + ".b1"]));
    s = ops::sigmoid(ops::linear(s, p[prefix + ".w2"], p[prefix + ".b2"]));
    return ops::scale_channels(x, s);
}

void RegNetConfig::validate() const {
    if (rank < 1 || rank > 3) throw std::invalid_argument("regnet: rank must be 1, 2 or 3");
    if (encoder_channels.empty() || encoder_channels.size() != decoder_channels.size()) {
        throw std::invalid_argument("regnet: encoder and decoder need the same non-zero number of levels");
    }
    for (Index c : encoder_channels) {
        if (c < 1) throw std::invalid_argument("regnet: channel counts must be positive");
    }
    if (se_reduction < 1) throw std::invalid_argument("regnet: se_reduction must be >= 1");
    for (Index c : decoder_channels) {
        if (c < 1 || c % se_reduction != 0) throw std::invalid_argument("regnet: se_reduction must divide every decoder width");
    }
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("regnet: kernel must be odd");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("regnet: leaky slope must lie in (0, 1)");
}

nlohmann::json RegNetConfig::to_json() const {
    return {{"rank", rank},
            {"encoder_channels", encoder_channels},
            {"decoder_channels", decoder_channels},
            {"se_reduction", se_reduction},
            {"kernel", kernel},
            {"leaky_slope", leaky_slope}};
}

RegNetConfig RegNetConfig::from_json(const nlohmann::json &j) {
    RegNetConfig c;
    c.rank = j.value("rank", c.rank);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.kernel = j.value("kernel", c.kernel);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
}

namespace {

Shape kernel_shape(Index co, Index ci, Index k, int rank) {
    Shape s{co, ci};
    s.insert(s.end(), static_cast<std::size_t>(rank), k);
    return s;
}

template <typename T>
void add_conv(ParamSet<T> &p, const std::string &name, Index co, Index ci, const RegNetConfig &cfg, std::mt19937_64 &rng) {
    Tensor<T> w(kernel_shape(co, ci, cfg.kernel, cfg.rank));
    const double fan_in = static_cast<double>(w.size() / co);
    const double bound = std::sqrt(6.0 / ((1.0 + cfg.leaky_slope * cfg.leaky_slope) * fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<T>(u(rng));
    p[name + ".w"] = std::move(w);
    p[name + ".b"] = Tensor<T>(Shape{co});
}

template <typename T>
void add_norm(ParamSet<T> &p, const std::string &name, Index c) {
    p[name + ".gamma"] = Tensor<T>(Shape{c}, T(1));
    p[name + ".beta"] = Tensor<T>(Shape{c});
    p[name + ".mean_logits"] = Tensor<T>(Shape{3});
    p[name + ".var_logits"] = Tensor<T>(Shape{3});
}

template <typename T>
void add_se(ParamSet<T> &p, const std::string &name, Index c, Index r, std::mt19937_64 &rng) {
    const Index hidden = c / r;
    auto dense = [&](Index out, Index in) {
        Tensor<T> w(Shape{out, in});
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(in)), 1.0 / std::sqrt(static_cast<double>(in)));
        for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<T>(u(rng));
        return w;
    };
    p[name + ".w1"] = dense(hidden, c);
    p[name + ".b1"] = Tensor<T>(Shape{hidden});
    p[name + ".w2"] = dense(c, hidden);
    p[name + ".b2"] = Tensor<T>(Shape{c});
}

template <typename T>
Var<T> norm_act(const BoundParams<T> &p, const std::string &name, const Var<T> &x, double slope) {
    const Var<T> y = ops::switchable_norm(x, p[name + ".gamma"], p[name + ".beta"], p[name + ".mean_logits"], p[name + ".var_logits"]);
    return ops::leaky_relu(y, static_cast<T>(slope));
}

} // namespace

template <typename T>
ParamSet<T> init_regnet(const RegNetConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParamSet<T> p;
    const std::size_t levels = cfg.encoder_channels.size();
    // skip source widths: the 2-channel input then each encoder level
    std::vector<Index> widths{2};
    for (std::size_t i = 0; i < levels; ++i) {
        const std::string name = "enc." + std::to_string(i);
        add_conv(p, name + ".conv", cfg.encoder_channels[i], widths.back(), cfg, rng);
        add_norm(p, name + ".sn", cfg.encoder_channels[i]);
        widths.push_back(cfg.encoder_channels[i]);
    }
    Index in = widths.back();
    for (std::size_t i = 0; i < levels; ++i) {
        const std::string name = "dec." + std::to_string(i);
        const Index skip = widths[levels - 1 - i];
        add_conv(p, name + ".conv", cfg.decoder_channels[i], in + skip, cfg, rng);
        add_norm(p, name + ".sn", cfg.decoder_channels[i]);
        add_se(p, name + ".se", cfg.decoder_channels[i], cfg.se_reduction, rng);
        in = cfg.decoder_channels[i];
    }
    p["head.w"] = Tensor<T>(kernel_shape(cfg.rank, in, cfg.kernel, cfg.rank));
    p["head.b"] = Tensor<T>(Shape{cfg.rank});
    return p;
}

template <typename T>
Var<T> regnet_forward(const BoundParams<T> &p, const RegNetConfig &cfg, const Var<T> &moving, const Var<T> &fixed) {
    const Shape &s = moving.shape();
    if (s != fixed.shape()) throw ShapeError("regnet: moving " + shape_string(s) + " and fixed " + shape_string(fixed.shape()) + " differ");
    if (s.size() != static_cast<std::size_t>(cfg.rank) + 2 || s[1] != 1) {
        throw ShapeError("regnet: expected (N, 1, S...) of rank " + std::to_string(cfg.rank) + ", got " + shape_string(s));
    }
    for (std::size_t a = 2; a < s.size(); ++a) {
        if (s[a] % cfg.size_multiple() != 0) {
            throw ShapeError("regnet: spatial extents must be divisible by " + std::to_string(cfg.size_multiple()) + ", got " + shape_string(s));
        }
    }
    const std::size_t levels = cfg.encoder_channels.size();
    std::vector<Var<T>> skips{ops::concat_channels<T>({moving, fixed})};
    for (std::size_t i = 0; i < levels; ++i) {
        const std::string name = "enc." + std::to_string(i);
        const Var<T> h = ops::conv(skips.back(), p[name + ".conv.w"], p[name + ".conv.b"], 2);
        skips.push_back(norm_act(p, name + ".sn", h, cfg.leaky_slope));
    }
    Var<T> h = skips.back();
    for (std::size_t i = 0; i < levels; ++i) {
        const std::string name = "dec." + std::to_string(i);
        h = ops::concat_channels<T>({ops::upsample_nearest(h, 2), skips[levels - 1 - i]});
        h = ops::conv(h, p[name + ".conv.w"], p[name + ".conv.b"]);
        h = norm_act(p, name + ".sn", h, cfg.leaky_slope);
        h = se_block(p, name + ".se", h);
    }
    return ops::conv(h, p["head.w"], p["head.b"]);
}

#define DIVREG_INSTANTIATE_REGNET(T)                                                                  \
    template Var<T> se_block(const BoundParams<T> &, const std::string &, const Var<T> &);            \
    template ParamSet<T> init_regnet<T>(const RegNetConfig &, std::uint64_t);                         \
    template Var<T> regnet_forward(const BoundParams<T> &, const RegNetConfig &, const Var<T> &, const Var<T> &);

DIVREG_INSTANTIATE_REGNET(float)
DIVREG_INSTANTIATE_REGNET(double)

} // namespace divreg
