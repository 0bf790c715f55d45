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

#include "divreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace divreg::ops {

namespace {

template <typename T>
void require_same_shape(const char *op, const Var<T> &a, const Var<T> &b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

template <typename T>
void require_min_rank(const char *op, const Var<T> &a, int rank) {
    if (a.value().ndim() < rank) {
        throw ShapeError(std::string(op) + ": expected at least " + std::to_string(rank) + " axes, got " +
                         shape_string(a.shape()));
    }
}

template <typename T, typename F, typename G>
Var<T> unary(const char *op, const Var<T> &a, F value_fn, G deriv_fn) {
    const Tensor<T> &x = a.value();
    Tensor<T> y(x.shape());
    for (Index i = 0; i < x.size(); ++i) y[i] = value_fn(x[i]);
    const int ia = a.id();
    return a.tape().record(op, std::move(y), {a},
        [ia, deriv_fn](Tape<T> &t, const Tensor<T> &out, const Tensor<T> &g) {
            const Tensor<T> &xv = t.value(ia);
            Tensor<T> &gx = t.grad_buffer(ia);
            for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv_fn(xv[i], out[i]);
        });
}

struct ConvGeometry {
    Index n, ci, co;
    Extent3 in, out, k;
    Index stride;
    Index pd, ph, pw;
};

ConvGeometry conv_geometry(const Shape &xs, const Shape &ws, Index stride) {
    if (xs.size() < 3 || xs.size() > 5) throw ShapeError("conv: input must be (N, C, S...) with 1..3 spatial axes");
    if (ws.size() != xs.size()) throw ShapeError("conv: kernel rank " + shape_string(ws) + " does not match input " + shape_string(xs));
    if (ws[1] != xs[1]) {
        throw ShapeError("conv: kernel expects " + std::to_string(ws[1]) + " input channels, got " + std::to_string(xs[1]));
    }
    if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
    ConvGeometry g;
    g.n = xs[0];
    g.ci = xs[1];
    g.co = ws[0];
    g.in = Extent3::of(Shape(xs.begin() + 2, xs.end()));
    g.k = Extent3::of(Shape(ws.begin() + 2, ws.end()));
    g.stride = stride;
    const Extent3 &k = g.k;
    if (k.d % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0) throw ShapeError("conv: kernel extents must be odd");
    const int rank = static_cast<int>(xs.size()) - 2;
    g.pd = (k.d - 1) / 2;
    g.ph = (k.h - 1) / 2;
    g.pw = (k.w - 1) / 2;
    auto out_extent = [&](Index in, bool real) { return real ? (in + stride - 1) / stride : Index(1); };
    g.out.w = out_extent(g.in.w, true);
    g.out.h = out_extent(g.in.h, rank >= 2);
    g.out.d = out_extent(g.in.d, rank >= 3);
    return g;
}

// Valid output range [lo, hi) along one axis for kernel tap kk.
inline void tap_range(Index out_extent, Index in_extent, Index stride, Index kk, Index pad, Index &lo, Index &hi) {
    // input index = o * stride + kk - pad must lie in [0, in_extent)
    const Index off = kk - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const Index last = in_extent - 1 - off;
    hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
}

// Applies `body(out_index, in_index, count, in_step)` over every row segment of
// the output touched by kernel tap (kd, kh, kw).
template <typename F>
void for_each_tap_row(const ConvGeometry &g, Index kd, Index kh, Index kw, F body) {
    Index d0, d1, h0, h1, w0, w1;
    tap_range(g.out.d, g.in.d, g.out.d == 1 && g.in.d == 1 ? 1 : g.stride, kd, g.pd, d0, d1);
    tap_range(g.out.h, g.in.h, g.out.h == 1 && g.in.h == 1 ? 1 : g.stride, kh, g.ph, h0, h1);
    tap_range(g.out.w, g.in.w, g.stride, kw, g.pw, w0, w1);
    if (w1 <= w0) return;
    const Index sd = (g.out.d == 1 && g.in.d == 1) ? 1 : g.stride;
    const Index sh = (g.out.h == 1 && g.in.h == 1) ? 1 : g.stride;
    for (Index od = d0; od < d1; ++od) {
        const Index id = od * sd + kd - g.pd;
        for (Index oh = h0; oh < h1; ++oh) {
            const Index ih = oh * sh + kh - g.ph;
            const Index out_row = (od * g.out.h + oh) * g.out.w;
            const Index in_row = (id * g.in.h + ih) * g.in.w;
            body(out_row + w0, in_row + w0 * g.stride + kw - g.pw, w1 - w0);
        }
    }
}

} // namespace

template <typename T>
Var<T> add(const Var<T> &a, const Var<T> &b) {
    require_same_shape("add", a, b);
    Tensor<T> y(a.shape());
    const Tensor<T> &x1 = a.value();
    const Tensor<T> &x2 = b.value();
    for (Index i = 0; i < y.size(); ++i) y[i] = x1[i] + x2[i];
    const int ia = a.id(), ib = b.id();
    return a.tape().record("add", std::move(y), {a, b}, [ia, ib](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        for (int id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            Tensor<T> &gx = t.grad_buffer(id);
            for (Index i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T> &a, const Var<T> &b) {
    require_same_shape("sub", a, b);
    Tensor<T> y(a.shape());
    const Tensor<T> &x1 = a.value();
    const Tensor<T> &x2 = b.value();
    for (Index i = 0; i < y.size(); ++i) y[i] = x1[i] - x2[i];
    const int ia = a.id(), ib = b.id();
    return a.tape().record("sub", std::move(y), {a, b}, [ia, ib](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        if (t.requires_grad(ia)) {
            Tensor<T> &gx = t.grad_buffer(ia);
            for (Index i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            Tensor<T> &gx = t.grad_buffer(ib);
            for (Index i = 0; i < g.size(); ++i) gx[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T> &a, const Var<T> &b) {
    require_same_shape("mul", a, b);
    Tensor<T> y(a.shape());
    const Tensor<T> &x1 = a.value();
    const Tensor<T> &x2 = b.value();
    for (Index i = 0; i < y.size(); ++i) y[i] = x1[i] * x2[i];
    const int ia = a.id(), ib = b.id();
    return a.tape().record("mul", std::move(y), {a, b}, [ia, ib](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        const Tensor<T> &v1 = t.value(ia);
        const Tensor<T> &v2 = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor<T> &gx = t.grad_buffer(ia);
            for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * v2[i];
        }
        if (t.requires_grad(ib)) {
            Tensor<T> &gx = t.grad_buffer(ib);
            for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * v1[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T> &a, T factor) {
    return unary<T>("scale", a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T> &a, T c) {
    return unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(const Var<T> &a) {
    return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> exp(const Var<T> &a) {
    return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T> &a) {
    for (T v : a.value().values()) {
        if (!(v > T(0))) throw std::domain_error("log: non-positive input");
    }
    return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(const Var<T> &a) {
    auto f = [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
    };
    return unary<T>("sigmoid", a, f, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> leaky_relu(const Var<T> &a, T slope) {
    if (!(slope > T(0) && slope < T(1))) throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
    return unary<T>("leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
                    [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T> &a) {
    return unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> conv(const Var<T> &x, const Var<T> &w, const Var<T> &b, Index stride) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride);
    if (b.shape() != Shape{g.co}) throw ShapeError("conv: bias shape " + shape_string(b.shape()) + " expected [" + std::to_string(g.co) + "]");
    const int rank = x.value().spatial_rank();
    Shape out_shape{g.n, g.co};
    for (Index e : g.out.to_shape(rank)) out_shape.push_back(e);
    Tensor<T> y(out_shape);

    const Index in_plane = g.in.size(), out_plane = g.out.size(), k_size = g.k.size();
    const T *xd = x.value().data();
    const T *wd = w.value().data();
    const T *bd = b.value().data();
    T *yd = y.data();
    const Index s = g.stride;
    for (Index n = 0; n < g.n; ++n) {
        for (Index co = 0; co < g.co; ++co) {
            T *out = yd + (n * g.co + co) * out_plane;
            std::fill(out, out + out_plane, bd[co]);
            for (Index ci = 0; ci < g.ci; ++ci) {
                const T *in = xd + (n * g.ci + ci) * in_plane;
                const T *wk = wd + (co * g.ci + ci) * k_size;
                for (Index kd = 0; kd < g.k.d; ++kd)
                    for (Index kh = 0; kh < g.k.h; ++kh)
                        for (Index kw = 0; kw < g.k.w; ++kw) {
                            const T wv = wk[(kd * g.k.h + kh) * g.k.w + kw];
                            for_each_tap_row(g, kd, kh, kw, [&](Index o, Index i, Index count) {
                                T *op = out + o;
                                const T *ip = in + i;
                                if (s == 1) {
#pragma omp simd
                                    for (Index j = 0; j < count; ++j) op[j] += wv * ip[j];
                                } else {
                                    for (Index j = 0; j < count; ++j) op[j] += wv * ip[j * s];
                                }
                            });
                        }
            }
        }
    }

    const int ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().record("conv", std::move(y), {x, w, b}, [g, ix, iw, ib](Tape<T> &t, const Tensor<T> &, const Tensor<T> &gy) {
        const Index in_plane = g.in.size(), out_plane = g.out.size(), k_size = g.k.size();
        const Index s = g.stride;
        const T *gyd = gy.data();
        if (t.requires_grad(ib)) {
            Tensor<T> &gb = t.grad_buffer(ib);
            for (Index n = 0; n < g.n; ++n)
                for (Index co = 0; co < g.co; ++co) {
                    const T *go = gyd + (n * g.co + co) * out_plane;
                    T acc = 0;
#pragma omp simd reduction(+ : acc)
                    for (Index j = 0; j < out_plane; ++j) acc += go[j];
                    gb[co] += acc;
                }
        }
        const T *xd = t.value(ix).data();
        const T *wd = t.value(iw).data();
        if (t.requires_grad(iw)) {
            T *gw = t.grad_buffer(iw).data();
            for (Index n = 0; n < g.n; ++n)
                for (Index co = 0; co < g.co; ++co) {
                    const T *go = gyd + (n * g.co + co) * out_plane;
                    for (Index ci = 0; ci < g.ci; ++ci) {
                        const T *in = xd + (n * g.ci + ci) * in_plane;
                        T *gk = gw + (co * g.ci + ci) * k_size;
                        for (Index kd = 0; kd < g.k.d; ++kd)
                            for (Index kh = 0; kh < g.k.h; ++kh)
                                for (Index kw = 0; kw < g.k.w; ++kw) {
                                    T acc = 0;
                                    for_each_tap_row(g, kd, kh, kw, [&](Index o, Index i, Index count) {
                                        const T *op = go + o;
                                        const T *ip = in + i;
                                        T part = 0;
                                        if (s == 1) {
#pragma omp simd reduction(+ : part)
                                            for (Index j = 0; j < count; ++j) part += op[j] * ip[j];
                                        } else {
                                            for (Index j = 0; j < count; ++j) part += op[j] * ip[j * s];
                                        }
                                        acc += part;
                                    });
                                    gk[(kd * g.k.h + kh) * g.k.w + kw] += acc;
                                }
                    }
                }
        }
        if (t.requires_grad(ix)) {
            T *gx = t.grad_buffer(ix).data();
            for (Index n = 0; n < g.n; ++n)
                for (Index ci = 0; ci < g.ci; ++ci) {
                    T *gin = gx + (n * g.ci + ci) * in_plane;
                    for (Index co = 0; co < g.co; ++co) {
                        const T *go = gyd + (n * g.co + co) * out_plane;
                        const T *wk = wd + (co * g.ci + ci) * k_size;
                        for (Index kd = 0; kd < g.k.d; ++kd)
                            for (Index kh = 0; kh < g.k.h; ++kh)
                                for (Index kw = 0; kw < g.k.w; ++kw) {
                                    const T wv = wk[(kd * g.k.h + kh) * g.k.w + kw];
                                    for_each_tap_row(g, kd, kh, kw, [&](Index o, Index i, Index count) {
                                        const T *op = go + o;
                                        T *ip = gin + i;
                                        if (s == 1) {
#pragma omp simd
                                            for (Index j = 0; j < count; ++j) ip[j] += wv * op[j];
                                        } else {
                                            for (Index j = 0; j < count; ++j) ip[j * s] += wv * op[j];
                                        }
                                    });
                                }
                    }
                }
        }
    });
}

template <typename T>
Var<T> avg_pool(const Var<T> &x, Index factor) {
    require_min_rank("avg_pool", x, 3);
    if (factor < 1) throw std::invalid_argument("avg_pool: factor must be >= 1");
    const Tensor<T> &xv = x.value();
    const int rank = xv.spatial_rank();
    const Shape sp = xv.spatial_shape();
    for (Index e : sp) {
        if (e % factor != 0) throw ShapeError("avg_pool: extent " + shape_string(sp) + " not divisible by " + std::to_string(factor));
    }
    const Extent3 in = Extent3::of(sp);
    Extent3 out = in;
    out.w /= factor;
    if (rank >= 2) out.h /= factor;
    if (rank >= 3) out.d /= factor;
    const Index fd = rank >= 3 ? factor : 1, fh = rank >= 2 ? factor : 1, fw = factor;
    const T inv = T(1) / static_cast<T>(fd * fh * fw);
    Shape os{xv.batch(), xv.channels()};
    for (Index e : out.to_shape(rank)) os.push_back(e);
    Tensor<T> y(os);
    const Index planes = xv.batch() * xv.channels();
    for (Index p = 0; p < planes; ++p) {
        const T *ip = xv.data() + p * in.size();
        T *op = y.data() + p * out.size();
        for (Index d = 0; d < in.d; ++d)
            for (Index h = 0; h < in.h; ++h)
                for (Index w = 0; w < in.w; ++w)
                    op[((d / fd) * out.h + h / fh) * out.w + w / fw] += ip[(d * in.h + h) * in.w + w];
        for (Index i = 0; i < out.size(); ++i) op[i] *= inv;
    }
    const int ix = x.id();
    return x.tape().record("avg_pool", std::move(y), {x}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ix);
        for (Index p = 0; p < planes; ++p) {
            T *ip = gx.data() + p * in.size();
            const T *op = g.data() + p * out.size();
            for (Index d = 0; d < in.d; ++d)
                for (Index h = 0; h < in.h; ++h)
                    for (Index w = 0; w < in.w; ++w)
                        ip[(d * in.h + h) * in.w + w] += inv * op[((d / fd) * out.h + h / fh) * out.w + w / fw];
        }
    });
}

template <typename T>
Var<T> upsample_nearest(const Var<T> &x, Index factor) {
    require_min_rank("upsample_nearest", x, 3);
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const Tensor<T> &xv = x.value();
    const int rank = xv.spatial_rank();
    const Extent3 in = Extent3::of(xv.spatial_shape());
    Extent3 out = in;
    out.w *= factor;
    if (rank >= 2) out.h *= factor;
    if (rank >= 3) out.d *= factor;
    const Index fd = rank >= 3 ? factor : 1, fh = rank >= 2 ? factor : 1, fw = factor;
    Shape os{xv.batch(), xv.channels()};
    for (Index e : out.to_shape(rank)) os.push_back(e);
    Tensor<T> y(os);
    const Index planes = xv.batch() * xv.channels();
    for (Index p = 0; p < planes; ++p) {
        const T *ip = xv.data() + p * in.size();
        T *op = y.data() + p * out.size();
        for (Index d = 0; d < out.d; ++d)
            for (Index h = 0; h < out.h; ++h)
                for (Index w = 0; w < out.w; ++w)
                    op[(d * out.h + h) * out.w + w] = ip[((d / fd) * in.h + h / fh) * in.w + w / fw];
    }
    const int ix = x.id();
    return x.tape().record("upsample_nearest", std::move(y), {x}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ix);
        for (Index p = 0; p < planes; ++p) {
            T *ip = gx.data() + p * in.size();
            const T *op = g.data() + p * out.size();
            for (Index d = 0; d < out.d; ++d)
                for (Index h = 0; h < out.h; ++h)
                    for (Index w = 0; w < out.w; ++w)
                        ip[((d / fd) * in.h + h / fh) * in.w + w / fw] += op[(d * out.h + h) * out.w + w];
        }
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T> &x) {
    require_min_rank("global_avg_pool", x, 3);
    const Tensor<T> &xv = x.value();
    const Index planes = xv.batch() * xv.channels();
    const Index sz = xv.spatial_size();
    Tensor<T> y(Shape{xv.batch(), xv.channels()});
    for (Index p = 0; p < planes; ++p) {
        T acc = 0;
        const T *ip = xv.data() + p * sz;
        for (Index i = 0; i < sz; ++i) acc += ip[i];
        y[p] = acc / static_cast<T>(sz);
    }
    const int ix = x.id();
    return x.tape().record("global_avg_pool", std::move(y), {x}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ix);
        for (Index p = 0; p < planes; ++p) {
            const T v = g[p] / static_cast<T>(sz);
            T *ip = gx.data() + p * sz;
            for (Index i = 0; i < sz; ++i) ip[i] += v;
        }
    });
}

template <typename T>
Var<T> linear(const Var<T> &x, const Var<T> &w, const Var<T> &b) {
    const Shape &xs = x.shape(), &ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1] || b.shape() != Shape{ws[0]}) {
        throw ShapeError("linear: incompatible shapes x" + shape_string(xs) + " w" + shape_string(ws) + " b" + shape_string(b.shape()));
    }
    const Index n = xs[0], cin = xs[1], cout = ws[0];
    Tensor<T> y(Shape{n, cout});
    const T *xd = x.value().data(), *wd = w.value().data(), *bd = b.value().data();
    for (Index i = 0; i < n; ++i)
        for (Index o = 0; o < cout; ++o) {
            T acc = bd[o];
            for (Index k = 0; k < cin; ++k) acc += wd[o * cin + k] * xd[i * cin + k];
            y[i * cout + o] = acc;
        }
    const int ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().record("linear", std::move(y), {x, w, b}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        const T *xd = t.value(ix).data(), *wd = t.value(iw).data();
        if (t.requires_grad(ib)) {
            Tensor<T> &gb = t.grad_buffer(ib);
            for (Index i = 0; i < n; ++i)
                for (Index o = 0; o < cout; ++o) gb[o] += g[i * cout + o];
        }
        if (t.requires_grad(iw)) {
            Tensor<T> &gw = t.grad_buffer(iw);
            for (Index i = 0; i < n; ++i)
                for (Index o = 0; o < cout; ++o)
                    for (Index k = 0; k < cin; ++k) gw[o * cin + k] += g[i * cout + o] * xd[i * cin + k];
        }
        if (t.requires_grad(ix)) {
            Tensor<T> &gx = t.grad_buffer(ix);
            for (Index i = 0; i < n; ++i)
                for (Index o = 0; o < cout; ++o)
                    for (Index k = 0; k < cin; ++k) gx[i * cin + k] += g[i * cout + o] * wd[o * cin + k];
        }
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>> &parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no operands");
    const Shape &s0 = parts.front().shape();
    if (s0.size() < 2) throw ShapeError("concat_channels: operands need (N, C, ...) layout");
    Index total = 0;
    std::vector<Index> chans;
    for (const auto &p : parts) {
        const Shape &s = p.shape();
        if (s.size() != s0.size() || s[0] != s0[0] || !std::equal(s.begin() + 2, s.end(), s0.begin() + 2)) {
            throw ShapeError("concat_channels: incompatible " + shape_string(s) + " vs " + shape_string(s0));
        }
        chans.push_back(s[1]);
        total += s[1];
    }
    Shape os = s0;
    os[1] = total;
    Tensor<T> y(os);
    const Index n = s0[0];
    const Index plane = shape_size(Shape(s0.begin() + 2, s0.end()));
    std::vector<int> ids;
    for (Index b = 0; b < n; ++b) {
        Index c0 = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const T *src = parts[k].value().data() + b * chans[k] * plane;
            std::copy(src, src + chans[k] * plane, y.data() + (b * total + c0) * plane);
            c0 += chans[k];
        }
    }
    for (const auto &p : parts) ids.push_back(p.id());
    return parts.front().tape().record("concat_channels", std::move(y), parts,
        [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
            for (Index b = 0; b < n; ++b) {
                Index c0 = 0;
                for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (t.requires_grad(ids[k])) {
                        T *dst = t.grad_buffer(ids[k]).data() + b * chans[k] * plane;
                        const T *src = g.data() + (b * total + c0) * plane;
                        for (Index i = 0; i < chans[k] * plane; ++i) dst[i] += src[i];
                    }
                    c0 += chans[k];
                }
            }
        });
}

template <typename T>
Var<T> scale_channels(const Var<T> &x, const Var<T> &s) {
    require_min_rank("scale_channels", x, 3);
    const Tensor<T> &xv = x.value();
    if (s.shape() != Shape{xv.batch(), xv.channels()}) {
        throw ShapeError("scale_channels: gate shape " + shape_string(s.shape()) + " does not match " + shape_string(xv.shape()));
    }
    const Index planes = xv.batch() * xv.channels(), sz = xv.spatial_size();
    Tensor<T> y(xv.shape());
    const Tensor<T> &sv = s.value();
    for (Index p = 0; p < planes; ++p)
        for (Index i = 0; i < sz; ++i) y[p * sz + i] = xv[p * sz + i] * sv[p];
    const int ix = x.id(), is = s.id();
    return x.tape().record("scale_channels", std::move(y), {x, s}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        const Tensor<T> &xv = t.value(ix);
        const Tensor<T> &sv = t.value(is);
        if (t.requires_grad(ix)) {
            Tensor<T> &gx = t.grad_buffer(ix);
            for (Index p = 0; p < planes; ++p)
                for (Index i = 0; i < sz; ++i) gx[p * sz + i] += g[p * sz + i] * sv[p];
        }
        if (t.requires_grad(is)) {
            Tensor<T> &gs = t.grad_buffer(is);
            for (Index p = 0; p < planes; ++p) {
                T acc = 0;
                for (Index i = 0; i < sz; ++i) acc += g[p * sz + i] * xv[p * sz + i];
                gs[p] += acc;
            }
        }
    });
}

template <typename T>
Var<T> permute_spatial(const Var<T> &x, const std::vector<std::vector<Index>> &perm) {
    require_min_rank("permute_spatial", x, 3);
    const Tensor<T> &xv = x.value();
    const Index n = xv.batch(), c = xv.channels(), sz = xv.spatial_size();
    if (static_cast<Index>(perm.size()) != n) throw ShapeError("permute_spatial: need one permutation per sample");
    for (const auto &p : perm) {
        if (static_cast<Index>(p.size()) != sz) throw ShapeError("permute_spatial: permutation length mismatch");
        for (Index v : p) {
            if (v < 0 || v >= sz) throw std::out_of_range("permute_spatial: index out of range");
        }
    }
    Tensor<T> y(xv.shape());
    for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch) {
            const Index base = (b * c + ch) * sz;
            for (Index i = 0; i < sz; ++i) y[base + i] = xv[base + perm[b][i]];
        }
    const int ix = x.id();
    return x.tape().record("permute_spatial", std::move(y), {x}, [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ix);
        for (Index b = 0; b < n; ++b)
            for (Index ch = 0; ch < c; ++ch) {
                const Index base = (b * c + ch) * sz;
                for (Index i = 0; i < sz; ++i) gx[base + perm[b][i]] += g[base + i];
            }
    });
}

template <typename T>
Var<T> reduce_sum(const Var<T> &a) {
    const Tensor<T> &x = a.value();
    T acc = 0;
    for (T v : x.values()) acc += v;
    const int ia = a.id();
    return a.tape().record("reduce_sum", Tensor<T>::scalar(acc), {a}, [ia](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ia);
        for (Index i = 0; i < gx.size(); ++i) gx[i] += g[0];
    });
}

template <typename T>
Var<T> reduce_mean(const Var<T> &a) {
    const Tensor<T> &x = a.value();
    if (x.empty()) throw ShapeError("reduce_mean: empty tensor");
    T acc = 0;
    for (T v : x.values()) acc += v;
    const T inv = T(1) / static_cast<T>(x.size());
    const int ia = a.id();
    return a.tape().record("reduce_mean", Tensor<T>::scalar(acc * inv), {a}, [ia, inv](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ia);
        for (Index i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv;
    });
}

template <typename T>
Var<T> log_mean_exp(const Var<T> &a) {
    const Tensor<T> &x = a.value();
    if (x.empty()) throw ShapeError("log_mean_exp: empty tensor");
    const T m = *std::max_element(x.values().begin(), x.values().end());
    T acc = 0;
    for (T v : x.values()) acc += std::exp(v - m);
    const T value = m + std::log(acc / static_cast<T>(x.size()));
    const int ia = a.id();
    return a.tape().record("log_mean_exp", Tensor<T>::scalar(value), {a}, [ia, m, acc](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        const Tensor<T> &xv = t.value(ia);
        Tensor<T> &gx = t.grad_buffer(ia);
        for (Index i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp(xv[i] - m) / acc;
    });
}

template <typename T>
Var<T> softmax(const Var<T> &a, int axis) {
    const Tensor<T> &x = a.value();
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw std::out_of_range("softmax: axis out of range");
    const Shape &s = x.shape();
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= s[static_cast<std::size_t>(i)];
    const Index len = s[static_cast<std::size_t>(axis)];
    Tensor<T> y(s);
    for (Index o = 0; o < outer; ++o)
        for (Index in = 0; in < inner; ++in) {
            const Index base = o * len * inner + in;
            T m = -std::numeric_limits<T>::infinity();
            for (Index k = 0; k < len; ++k) m = std::max(m, x[base + k * inner]);
            T z = 0;
            for (Index k = 0; k < len; ++k) z += (y[base + k * inner] = std::exp(x[base + k * inner] - m));
            for (Index k = 0; k < len; ++k) y[base + k * inner] /= z;
        }
    const int ia = a.id();
    return a.tape().record("softmax", std::move(y), {a}, [=](Tape<T> &t, const Tensor<T> &yv, const Tensor<T> &g) {
        Tensor<T> &gx = t.grad_buffer(ia);
        for (Index o = 0; o < outer; ++o)
            for (Index in = 0; in < inner; ++in) {
                const Index base = o * len * inner + in;
                T dot = 0;
                for (Index k = 0; k < len; ++k) dot += g[base + k * inner] * yv[base + k * inner];
                for (Index k = 0; k < len; ++k) gx[base + k * inner] += yv[base + k * inner] * (g[base + k * inner] - dot);
            }
    });
}

#define DIVREG_INSTANTIATE_OPS(T)                                                             \
    template Var<T> add(const Var<T> &, const Var<T> &);                                      \
    template Var<T> sub(const Var<T> &, const Var<T> &);                                      \
    template Var<T> mul(const Var<T> &, const Var<T> &);                                      \
    template Var<T> scale(const Var<T> &, T);                                                 \
    template Var<T> add_scalar(const Var<T> &, T);                                            \
    template Var<T> square(const Var<T> &);                                                   \
    template Var<T> exp(const Var<T> &);                                                      \
    template Var<T> log(const Var<T> &);                                                      \
    template Var<T> sigmoid(const Var<T> &);                                                  \
    template Var<T> leaky_relu(const Var<T> &, T);                                            \
    template Var<T> relu(const Var<T> &);                                                     \
    template Var<T> conv(const Var<T> &, const Var<T> &, const Var<T> &, Index);              \
    template Var<T> avg_pool(const Var<T> &, Index);                                          \
    template Var<T> upsample_nearest(const Var<T> &, Index);                                  \
    template Var<T> global_avg_pool(const Var<T> &);                                          \
    template Var<T> linear(const Var<T> &, const Var<T> &, const Var<T> &);                   \
    template Var<T> concat_channels(const std::vector<Var<T>> &);                             \
    template Var<T> scale_channels(const Var<T> &, const Var<T> &);                           \
    template Var<T> permute_spatial(const Var<T> &, const std::vector<std::vector<Index>> &); \
    template Var<T> reduce_sum(const Var<T> &);                                               \
    template Var<T> reduce_mean(const Var<T> &);                                              \
    template Var<T> log_mean_exp(const Var<T> &);                                             \
    template Var<T> softmax(const Var<T> &, int);

DIVREG_INSTANTIATE_OPS(float)
DIVREG_INSTANTIATE_OPS(double)

} // namespace divreg::ops
