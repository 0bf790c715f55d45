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

#include "divreg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "divreg/ops.hpp"

namespace divreg {

namespace {

constexpr double kLnccEps = 1e-5;

// In-place box sum of radius r along every real axis, truncated at the border.
template <typename T>
void box_sum(std::vector<T> &v, const Extent3 &e, int rank, Index r, std::vector<T> &scratch) {
    const Index ext[3] = {e.d, e.h, e.w};
    const Index stride[3] = {e.h * e.w, e.w, 1};
    for (int k = 3 - rank; k < 3; ++k) {
        const Index len = ext[k], st = stride[k];
        scratch.resize(static_cast<std::size_t>(len) + 1);
        const Index lines = e.size() / len;
        for (Index line = 0; line < lines; ++line) {
            // base offset of this line: enumerate the other two axes
            const Index outer = line / st, inner = line % st;
            const Index base = outer * len * st + inner;
            scratch[0] = 0;
            for (Index i = 0; i < len; ++i) scratch[static_cast<std::size_t>(i + 1)] = scratch[static_cast<std::size_t>(i)] + v[static_cast<std::size_t>(base + i * st)];
            for (Index i = 0; i < len; ++i) {
                const Index lo = std::max<Index>(0, i - r), hi = std::min(len - 1, i + r);
                v[static_cast<std::size_t>(base + i * st)] = scratch[static_cast<std::size_t>(hi + 1)] - scratch[static_cast<std::size_t>(lo)];
            }
        }
    }
}

// Number of voxels in the truncated window around each position.
std::vector<double> window_counts(const Extent3 &e, int rank, Index r) {
    std::vector<double> n(static_cast<std::size_t>(e.size()), 1.0), scratch;
    box_sum(n, e, rank, r, scratch);
    return n;
}

void check_same(const Shape &a, const Shape &b, const char *op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    if (a.size() < 3) throw ShapeError(std::string(op) + ": expected (N, C, S...)");
}

} // namespace

namespace ops {

template <typename T>
Var<T> ssd(const Var<T> &a, const Var<T> &b) {
    if (a.shape() != b.shape()) throw ShapeError("ssd: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    return reduce_mean(square(sub(a, b)));
}

template <typename T>
Var<T> lncc(const Var<T> &a, const Var<T> &b, Index window) {
    check_same(a.shape(), b.shape(), "lncc");
    const Shape sp(a.shape().begin() + 2, a.shape().end());
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("lncc: window must be odd, got " + std::to_string(window));
    for (Index e : sp) {
        if (window > e) throw std::invalid_argument("lncc: window " + std::to_string(window) + " exceeds image extent " + std::to_string(e));
    }
    const int rank = static_cast<int>(sp.size());
    const Extent3 e = Extent3::of(sp);
    const Index r = window / 2, vox = e.size();
    const Index planes = a.shape()[0] * a.shape()[1];
    const std::vector<double> cnt = window_counts(e, rank, r);
    const T inv_total = T(1) / static_cast<T>(planes * vox);

    // Per-plane window sums, kept for the backward pass.
    struct Moments {
        std::vector<T> sa, sb, saa, sbb, sab;
    };
    auto moments = std::make_shared<std::vector<Moments>>(static_cast<std::size_t>(planes));
    std::vector<T> scratch;
    T total = 0;
    for (Index p = 0; p < planes; ++p) {
        const T *av = a.value().data() + p * vox;
        const T *bv = b.value().data() + p * vox;
        Moments &m = (*moments)[static_cast<std::size_t>(p)];
        m.sa.assign(av, av + vox);
        m.sb.assign(bv, bv + vox);
        m.saa.resize(static_cast<std::size_t>(vox));
        m.sbb.resize(static_cast<std::size_t>(vox));
        m.sab.resize(static_cast<std::size_t>(vox));
        for (Index v = 0; v < vox; ++v) {
            const auto i = static_cast<std::size_t>(v);
            m.saa[i] = av[v] * av[v];
            m.sbb[i] = bv[v] * bv[v];
            m.sab[i] = av[v] * bv[v];
        }
        for (auto *s : {&m.sa, &m.sb, &m.saa, &m.sbb, &m.sab}) box_sum(*s, e, rank, r, scratch);
        T acc = 0;
        for (Index v = 0; v < vox; ++v) {
            const auto i = static_cast<std::size_t>(v);
            const T n = static_cast<T>(cnt[i]);
            const T cov = m.sab[i] - m.sa[i] * m.sb[i] / n;
            const T va = m.saa[i] - m.sa[i] * m.sa[i] / n;
            const T vb = m.sbb[i] - m.sb[i] * m.sb[i] / n;
            acc += cov * cov / (va * vb + static_cast<T>(kLnccEps));
        }
        total += acc;
    }
    const int ia = a.id(), ib = b.id();
    return a.tape().record("lncc", Tensor<T>::scalar(total * inv_total), {a, b},
        [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
            const T gc = g[0] * inv_total;
            const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
            std::vector<T> g_sa(static_cast<std::size_t>(vox)), g_sb(g_sa.size()), g_saa(g_sa.size()), g_sbb(g_sa.size()), g_sab(g_sa.size());
            std::vector<T> scr;
            for (Index p = 0; p < planes; ++p) {
                const Moments &m = (*moments)[static_cast<std::size_t>(p)];
                for (Index v = 0; v < vox; ++v) {
                    const auto i = static_cast<std::size_t>(v);
                    const T n = static_cast<T>(cnt[i]);
                    const T cov = m.sab[i] - m.sa[i] * m.sb[i] / n;
                    const T va = m.saa[i] - m.sa[i] * m.sa[i] / n;
                    const T vb = m.sbb[i] - m.sb[i] * m.sb[i] / n;
                    const T den = va * vb + static_cast<T>(kLnccEps);
                    const T cc = cov * cov / den;
                    const T d_cov = gc * T(2) * cov / den;
                    const T d_va = -gc * cc * vb / den;
                    const T d_vb = -gc * cc * va / den;
                    g_sab[i] = d_cov;
                    g_saa[i] = d_va;
                    g_sbb[i] = d_vb;
                    g_sa[i] = -d_cov * m.sb[i] / n - T(2) * d_va * m.sa[i] / n;
                    g_sb[i] = -d_cov * m.sa[i] / n - T(2) * d_vb * m.sb[i] / n;
                }
                // The truncated box is symmetric, so it is its own adjoint.
                for (auto *s : {&g_sa, &g_sb, &g_saa, &g_sbb, &g_sab}) box_sum(*s, e, rank, r, scr);
                const T *av = t.value(ia).data() + p * vox;
                const T *bv = t.value(ib).data() + p * vox;
                if (need_a) {
                    T *ga = t.grad_buffer(ia).data() + p * vox;
                    for (Index v = 0; v < vox; ++v) {
                        const auto i = static_cast<std::size_t>(v);
                        ga[v] += g_sa[i] + T(2) * av[v] * g_saa[i] + bv[v] * g_sab[i];
                    }
                }
                if (need_b) {
                    T *gb = t.grad_buffer(ib).data() + p * vox;
                    for (Index v = 0; v < vox; ++v) {
                        const auto i = static_cast<std::size_t>(v);
                        gb[v] += g_sb[i] + T(2) * bv[v] * g_sbb[i] + av[v] * g_sab[i];
                    }
                }
            }
        });
}

namespace {

// Gaussian bin weights of one intensity over its support [lo, hi). Fills
// w[i] and the log-weight slopes s[i] = d log(e_i) / d(bin coordinate);
// entries outside the support are left untouched.
struct Parzen {
    int bins;
    double sigma;

    struct Support {
        int lo = 0;
        int hi = 0;
    };

    Support weights(double x, double *w, double *s) const {
        const double y = x * bins;
        const double cut = 3.0 * sigma;
        Support sup{std::max(0, static_cast<int>(std::ceil(y - 0.5 - cut))), std::min(bins, static_cast<int>(std::floor(y - 0.5 + cut)) + 1)};
        double z = 0.0;
        for (int i = sup.lo; i < sup.hi; ++i) {
            const double d = y - (i + 0.5);
            w[i] = std::exp(-0.5 * d * d / (sigma * sigma));
            s[i] = -d / (sigma * sigma);
            z += w[i];
        }
        for (int i = sup.lo; i < sup.hi; ++i) w[i] /= z;
        return sup;
    }
};

void check_unit_range(const double *x, Index n, const char *op) {
    constexpr double tol = 1e-6;
    for (Index i = 0; i < n; ++i) {
        if (!(x[i] >= -tol && x[i] <= 1.0 + tol)) {
            throw std::domain_error(std::string(op) + ": intensity " + std::to_string(x[i]) + " outside [0, 1]");
        }
    }
}

} // namespace

template <typename T>
Var<T> mi_pwde(const Var<T> &a, const Var<T> &b, int bins, double sigma_bins) {
    check_same(a.shape(), b.shape(), "mi_pwde");
    if (bins < 2) throw std::invalid_argument("mi_pwde: bins must be >= 2");
    // the nearest bin centre must fall inside the 3 sigma support
    if (!(sigma_bins >= 1.0 / 6.0)) throw std::invalid_argument("mi_pwde: kernel sigma must be at least 1/6 bin");
    const Index nb = a.shape()[0];
    const Index vox = a.value().size() / nb;
    const auto B = static_cast<std::size_t>(bins);
    const Parzen kernel{bins, sigma_bins};

    std::vector<double> av(a.value().values().begin(), a.value().values().end());
    std::vector<double> bv(b.value().values().begin(), b.value().values().end());
    check_unit_range(av.data(), static_cast<Index>(av.size()), "mi_pwde");
    check_unit_range(bv.data(), static_cast<Index>(bv.size()), "mi_pwde");
    for (double &x : av) x = std::clamp(x, 0.0, 1.0);
    for (double &x : bv) x = std::clamp(x, 0.0, 1.0);

    // log(p_ij / (p_i p_j)) per sample, needed by the backward pass
    auto log_ratio = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nb) * B * B, 0.0);
    std::vector<double> wa(B), sa(B), wb(B), sb(B), p(B * B), pa(B), pb(B);
    double mi_total = 0.0;
    for (Index n = 0; n < nb; ++n) {
        std::fill(p.begin(), p.end(), 0.0);
        for (Index v = 0; v < vox; ++v) {
            const auto ra = kernel.weights(av[static_cast<std::size_t>(n * vox + v)], wa.data(), sa.data());
            const auto rb = kernel.weights(bv[static_cast<std::size_t>(n * vox + v)], wb.data(), sb.data());
            for (int i = ra.lo; i < ra.hi; ++i)
                for (int j = rb.lo; j < rb.hi; ++j) p[static_cast<std::size_t>(i) * B + static_cast<std::size_t>(j)] += wa[static_cast<std::size_t>(i)] * wb[static_cast<std::size_t>(j)];
        }
        std::fill(pa.begin(), pa.end(), 0.0);
        std::fill(pb.begin(), pb.end(), 0.0);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j) {
                p[i * B + j] /= static_cast<double>(vox);
                pa[i] += p[i * B + j];
                pb[j] += p[i * B + j];
            }
        double *lr = log_ratio->data() + static_cast<std::size_t>(n) * B * B;
        auto term = [&](std::size_t i, std::size_t j) {
            const double pij = p[i * B + j];
            if (pij <= 0.0) return 0.0;
            const double l = std::log(pij / (pa[i] * pb[j]));
            lr[i * B + j] = l;
            return pij * l;
        };
        // pairing (i, j) with (j, i) keeps the sum exactly symmetric in a and b
        double mi = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
            mi += term(i, i);
            for (std::size_t j = i + 1; j < B; ++j) mi += term(i, j) + term(j, i);
        }
        mi_total += mi;
    }
    const int ia = a.id(), ib = b.id();
    return a.tape().record("mi_pwde", Tensor<T>::scalar(static_cast<T>(mi_total / static_cast<double>(nb))), {a, b},
        [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
            const double scale = static_cast<double>(g[0]) / static_cast<double>(nb) / static_cast<double>(vox);
            const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
            const Tensor<T> &at = t.value(ia), &bt = t.value(ib);
            T *ga = need_a ? t.grad_buffer(ia).data() : nullptr;
            T *gbp = need_b ? t.grad_buffer(ib).data() : nullptr;
            std::vector<double> wa2(B), sa2(B), wb2(B), sb2(B), gwa(B), gwb(B);
            for (Index n = 0; n < nb; ++n) {
                const double *lr = log_ratio->data() + static_cast<std::size_t>(n) * B * B;
                for (Index v = 0; v < vox; ++v) {
                    const Index off = n * vox + v;
                    const double x = std::clamp(static_cast<double>(at[off]), 0.0, 1.0);
                    const double y = std::clamp(static_cast<double>(bt[off]), 0.0, 1.0);
                    const auto ra = kernel.weights(x, wa2.data(), sa2.data());
                    const auto rb = kernel.weights(y, wb2.data(), sb2.data());
                    std::fill(gwa.begin(), gwa.end(), 0.0);
                    std::fill(gwb.begin(), gwb.end(), 0.0);
                    for (int i = ra.lo; i < ra.hi; ++i)
                        for (int j = rb.lo; j < rb.hi; ++j) {
                            const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
                            const double l = lr[ui * B + uj];
                            gwa[ui] += l * wb2[uj];
                            gwb[uj] += l * wa2[ui];
                        }
                    auto chain = [&](const std::vector<double> &w, const std::vector<double> &s, const std::vector<double> &gw, Parzen::Support r) {
                        double sbar = 0.0;
                        for (int i = r.lo; i < r.hi; ++i) sbar += w[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)];
                        double acc = 0.0;
                        for (int i = r.lo; i < r.hi; ++i) {
                            const auto ui = static_cast<std::size_t>(i);
                            acc += gw[ui] * w[ui] * (s[ui] - sbar);
                        }
                        return acc * static_cast<double>(bins);
                    };
                    if (ga) ga[off] += static_cast<T>(scale * chain(wa2, sa2, gwa, ra));
                    if (gbp) gbp[off] += static_cast<T>(scale * chain(wb2, sb2, gwb, rb));
                }
            }
        });
}

template Var<float> ssd(const Var<float> &, const Var<float> &);
template Var<double> ssd(const Var<double> &, const Var<double> &);
template Var<float> lncc(const Var<float> &, const Var<float> &, Index);
template Var<double> lncc(const Var<double> &, const Var<double> &, Index);
template Var<float> mi_pwde(const Var<float> &, const Var<float> &, int, double);
template Var<double> mi_pwde(const Var<double> &, const Var<double> &, int, double);

} // namespace ops

namespace {

template <typename F>
double eval_pair(const Image &a, const Image &b, F &&f) {
    if (a.dims() != b.dims()) throw ShapeError("similarity: image dims differ");
    Tape<double> tape;
    const Var<double> va = tape.constant(to_tensor<double>(a));
    const Var<double> vb = tape.constant(to_tensor<double>(b));
    return f(va, vb).value().item();
}

} // namespace

double ssd(const Image &a, const Image &b) {
    return eval_pair(a, b, [](auto &x, auto &y) { return ops::ssd(x, y); });
}

double lncc(const Image &a, const Image &b, Index window) {
    return eval_pair(a, b, [window](auto &x, auto &y) { return ops::lncc(x, y, window); });
}

double mi_pwde(const Image &a, const Image &b, int bins, double sigma_bins) {
    return eval_pair(a, b, [=](auto &x, auto &y) { return ops::mi_pwde(x, y, bins, sigma_bins); });
}

} // namespace divreg
