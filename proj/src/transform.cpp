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

#include "divreg/transform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace divreg {

namespace {

// Interpolation footprint along one axis.
template <typename T>
struct AxisSample {
    Index i0 = 0;
    Index i1 = 0;
    T t = 0;
    bool inside = false;
};

template <typename T>
AxisSample<T> sample_axis(T p, Index extent) {
    AxisSample<T> s;
    if (extent == 1) return s;
    const T hi = static_cast<T>(extent - 1);
    s.inside = p > T(0) && p < hi;
    const T pc = std::clamp(p, T(0), hi);
    Index i0 = static_cast<Index>(std::floor(pc));
    if (i0 >= extent - 1) i0 = extent - 2;
    s.i0 = i0;
    s.i1 = i0 + 1;
    s.t = pc - static_cast<T>(i0);
    return s;
}

// Maps array axis k of a rank-r grid to the Extent3 slot (0 = d, 1 = h, 2 = w).
inline int slot_of(int axis, int rank) { return 3 - rank + axis; }

struct WarpGeometry {
    Index n = 0, c = 0;
    int rank = 0;
    Extent3 ext;
};

WarpGeometry warp_geometry(const Shape &img, const Shape &field) {
    if (img.size() < 3) throw ShapeError("warp: image must be (N, C, S...)");
    const int rank = static_cast<int>(img.size()) - 2;
    if (field.size() != img.size() || field[0] != img[0] || field[1] != rank ||
        !std::equal(img.begin() + 2, img.end(), field.begin() + 2)) {
        throw ShapeError("warp: field " + shape_string(field) + " incompatible with image " + shape_string(img));
    }
    WarpGeometry g;
    g.n = img[0];
    g.c = img[1];
    g.rank = rank;
    g.ext = Extent3::of(Shape(img.begin() + 2, img.end()));
    return g;
}

// Calls body(corner_offset, weight, axis_sign_weights) for each interpolation
// corner of voxel (d, h, w) displaced by `disp` (indexed by slot).
template <typename T>
void corners(const WarpGeometry &g, Index d, Index h, Index w, const std::array<T, 3> &disp,
             std::array<AxisSample<T>, 3> &s) {
    const Index coord[3] = {d, h, w};
    const Index ext[3] = {g.ext.d, g.ext.h, g.ext.w};
    for (int k = 0; k < 3; ++k) {
        if (k < 3 - g.rank) {
            s[static_cast<std::size_t>(k)] = AxisSample<T>{coord[k], coord[k], T(0), false};
        } else {
            s[static_cast<std::size_t>(k)] = sample_axis<T>(static_cast<T>(coord[k]) + disp[static_cast<std::size_t>(k)], ext[k]);
        }
    }
}

template <typename T>
Tensor<T> warp_forward(const Tensor<T> &img, const Tensor<T> &field, const WarpGeometry &g) {
    Tensor<T> out(img.shape());
    const Index vox = g.ext.size();
    for (Index n = 0; n < g.n; ++n) {
        const T *fd = field.data() + n * g.rank * vox;
        Index v = 0;
        for (Index d = 0; d < g.ext.d; ++d)
            for (Index h = 0; h < g.ext.h; ++h)
                for (Index w = 0; w < g.ext.w; ++w, ++v) {
                    std::array<T, 3> disp{0, 0, 0};
                    for (int a = 0; a < g.rank; ++a) disp[static_cast<std::size_t>(slot_of(a, g.rank))] = fd[a * vox + v];
                    std::array<AxisSample<T>, 3> s;
                    corners(g, d, h, w, disp, s);
                    for (Index c = 0; c < g.c; ++c) {
                        const T *src = img.data() + (n * g.c + c) * vox;
                        T acc = 0;
                        for (int cd = 0; cd < 2; ++cd) {
                            const T wd = cd ? s[0].t : T(1) - s[0].t;
                            if (wd == T(0)) continue;
                            const Index id = cd ? s[0].i1 : s[0].i0;
                            for (int ch = 0; ch < 2; ++ch) {
                                const T wh = ch ? s[1].t : T(1) - s[1].t;
                                if (wh == T(0)) continue;
                                const Index ih = ch ? s[1].i1 : s[1].i0;
                                const Index row = (id * g.ext.h + ih) * g.ext.w;
                                acc += wd * wh * ((T(1) - s[2].t) * src[row + s[2].i0] + s[2].t * src[row + s[2].i1]);
                            }
                        }
                        out[(n * g.c + c) * vox + v] = acc;
                    }
                }
    }
    return out;
}

} // namespace

namespace ops {

template <typename T>
Var<T> warp(const Var<T> &img, const Var<T> &field) {
    const WarpGeometry g = warp_geometry(img.shape(), field.shape());
    Tensor<T> out = warp_forward(img.value(), field.value(), g);
    const int ii = img.id(), ifl = field.id();
    return img.tape().record("warp", std::move(out), {img, field}, [g, ii, ifl](Tape<T> &t, const Tensor<T> &, const Tensor<T> &gy) {
        const Tensor<T> &iv = t.value(ii);
        const Tensor<T> &fv = t.value(ifl);
        const bool need_img = t.requires_grad(ii), need_field = t.requires_grad(ifl);
        T *gi = need_img ? t.grad_buffer(ii).data() : nullptr;
        T *gf = need_field ? t.grad_buffer(ifl).data() : nullptr;
        const Index vox = g.ext.size();
        for (Index n = 0; n < g.n; ++n) {
            const T *fd = fv.data() + n * g.rank * vox;
            Index v = 0;
            for (Index d = 0; d < g.ext.d; ++d)
                for (Index h = 0; h < g.ext.h; ++h)
                    for (Index w = 0; w < g.ext.w; ++w, ++v) {
                        std::array<T, 3> disp{0, 0, 0};
                        for (int a = 0; a < g.rank; ++a) disp[static_cast<std::size_t>(slot_of(a, g.rank))] = fd[a * vox + v];
                        std::array<AxisSample<T>, 3> s;
                        corners(g, d, h, w, disp, s);
                        std::array<T, 3> dslot{0, 0, 0};
                        for (Index c = 0; c < g.c; ++c) {
                            const T go = gy[(n * g.c + c) * vox + v];
                            if (go == T(0)) continue;
                            const T *src = iv.data() + (n * g.c + c) * vox;
                            T *dst = need_img ? gi + (n * g.c + c) * vox : nullptr;
                            for (int corner = 0; corner < 8; ++corner) {
                                const int b[3] = {(corner >> 2) & 1, (corner >> 1) & 1, corner & 1};
                                T wts[3];
                                Index idx[3];
                                for (int k = 0; k < 3; ++k) {
                                    const auto &sk = s[static_cast<std::size_t>(k)];
                                    wts[k] = b[k] ? sk.t : T(1) - sk.t;
                                    idx[k] = b[k] ? sk.i1 : sk.i0;
                                }
                                // padded axes only contribute their "0" corner
                                bool skip = false;
                                for (int k = 0; k < 3 - g.rank; ++k) skip = skip || b[k];
                                if (skip) continue;
                                const Index off = (idx[0] * g.ext.h + idx[1]) * g.ext.w + idx[2];
                                if (dst) dst[off] += go * wts[0] * wts[1] * wts[2];
                                if (need_field) {
                                    const T val = src[off];
                                    for (int k = 3 - g.rank; k < 3; ++k) {
                                        if (!s[static_cast<std::size_t>(k)].inside) continue;
                                        T prod = b[k] ? T(1) : T(-1);
                                        for (int j = 0; j < 3; ++j) {
                                            if (j != k) prod *= wts[j];
                                        }
                                        dslot[static_cast<std::size_t>(k)] += go * prod * val;
                                    }
                                }
                            }
                        }
                        if (need_field) {
                            for (int a = 0; a < g.rank; ++a) gf[n * g.rank * vox + a * vox + v] += dslot[static_cast<std::size_t>(slot_of(a, g.rank))];
                        }
                    }
        }
    });
}

} // namespace ops

Index ffd_lattice_extent(Index dim, double voxel_spacing, double control_spacing_mm) {
    if (!(control_spacing_mm > 0.0)) throw std::invalid_argument("control spacing must be positive");
    const double span = static_cast<double>(dim - 1) * voxel_spacing / control_spacing_mm;
    return static_cast<Index>(std::floor(span)) + 4;
}

void bspline_basis(double t, double out[4]) {
    const double t2 = t * t, t3 = t2 * t, u = 1.0 - t;
    out[0] = u * u * u / 6.0;
    out[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    out[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    out[3] = t3 / 6.0;
}

FfdGrid FfdGrid::covering(const Shape &dims, const Spacing &voxel_spacing, const Spacing &control_spacing_mm) {
    if (voxel_spacing.size() != dims.size() || control_spacing_mm.size() != dims.size()) {
        throw std::invalid_argument("FfdGrid::covering: spacing rank mismatch");
    }
    FfdGrid g;
    g.control_spacing_mm = control_spacing_mm;
    for (std::size_t a = 0; a < dims.size(); ++a) {
        g.control_dims.push_back(ffd_lattice_extent(dims[a], voxel_spacing[a], control_spacing_mm[a]));
    }
    g.control_disp.assign(static_cast<std::size_t>(g.points() * g.rank()), 0.0);
    return g;
}

namespace {

// Per-axis B-spline taps for every voxel coordinate along that axis.
struct AxisTaps {
    Index taps = 1;                 // 4 on real axes, 1 on padded axes
    std::vector<Index> first;       // first control index per voxel coordinate
    std::vector<std::array<double, 4>> weights;
};

AxisTaps axis_taps(Index dim, double voxel_spacing, double control_spacing_mm, Index control_extent) {
    AxisTaps a;
    a.taps = 4;
    for (Index x = 0; x < dim; ++x) {
        const double u = static_cast<double>(x) * voxel_spacing / control_spacing_mm;
        const Index i = static_cast<Index>(std::floor(u));
        if (i + 3 >= control_extent) throw std::invalid_argument("FFD lattice does not cover the image domain");
        std::array<double, 4> w;
        bspline_basis(u - static_cast<double>(i), w.data());
        a.first.push_back(i);
        a.weights.push_back(w);
    }
    return a;
}

struct FfdLayout {
    int rank = 0;
    Extent3 dense, ctrl;
    std::array<AxisTaps, 3> axes;
};

FfdLayout ffd_layout(const Shape &dims, const Spacing &voxel_spacing, const Spacing &control_spacing_mm, const Shape &control_dims) {
    const int rank = static_cast<int>(dims.size());
    if (static_cast<int>(voxel_spacing.size()) != rank || static_cast<int>(control_spacing_mm.size()) != rank ||
        static_cast<int>(control_dims.size()) != rank) {
        throw std::invalid_argument("FFD: rank mismatch between image and lattice");
    }
    FfdLayout L;
    L.rank = rank;
    L.dense = Extent3::of(dims);
    L.ctrl = Extent3::of(control_dims);
    for (int k = 0; k < 3; ++k) {
        AxisTaps &t = L.axes[static_cast<std::size_t>(k)];
        if (k < 3 - rank) {
            t.taps = 1;
            t.first.assign(1, 0);
            t.weights.assign(1, {1.0, 0.0, 0.0, 0.0});
        } else {
            const auto a = static_cast<std::size_t>(k - (3 - rank));
            t = axis_taps(dims[a], voxel_spacing[a], control_spacing_mm[a], control_dims[a]);
        }
    }
    return L;
}

// dense[c][v] = sum of basis products * ctrl[c][...]; `adjoint` runs the transpose.
template <typename T>
void ffd_apply(const FfdLayout &L, const T *ctrl, T *dense, bool adjoint) {
    const Index cvox = L.ctrl.size(), dvox = L.dense.size();
    const auto &ad = L.axes[0], &ah = L.axes[1], &aw = L.axes[2];
    for (int c = 0; c < L.rank; ++c) {
        const T *cp = ctrl + c * cvox;
        T *dp = dense + c * dvox;
        T *cpa = const_cast<T *>(cp);
        Index v = 0;
        for (Index d = 0; d < L.dense.d; ++d)
            for (Index h = 0; h < L.dense.h; ++h)
                for (Index w = 0; w < L.dense.w; ++w, ++v) {
                    T acc = 0;
                    const T gv = adjoint ? dp[v] : T(0);
                    for (Index jd = 0; jd < ad.taps; ++jd) {
                        const T wd = static_cast<T>(ad.weights[static_cast<std::size_t>(d)][static_cast<std::size_t>(jd)]);
                        const Index id = ad.first[static_cast<std::size_t>(d)] + jd;
                        for (Index jh = 0; jh < ah.taps; ++jh) {
                            const T wh = static_cast<T>(ah.weights[static_cast<std::size_t>(h)][static_cast<std::size_t>(jh)]);
                            const Index ih = ah.first[static_cast<std::size_t>(h)] + jh;
                            const Index row = (id * L.ctrl.h + ih) * L.ctrl.w;
                            for (Index jw = 0; jw < aw.taps; ++jw) {
                                const T ww = static_cast<T>(aw.weights[static_cast<std::size_t>(w)][static_cast<std::size_t>(jw)]);
                                const Index iw = aw.first[static_cast<std::size_t>(w)] + jw;
                                if (adjoint) {
                                    cpa[row + iw] += gv * wd * wh * ww;
                                } else {
                                    acc += wd * wh * ww * cp[row + iw];
                                }
                            }
                        }
                    }
                    if (!adjoint) dp[v] = acc;
                }
    }
}

} // namespace

DisplacementField ffd_to_dvf(const FfdGrid &grid, const Shape &dims, const Spacing &spacing) {
    const FfdLayout L = ffd_layout(dims, spacing, grid.control_spacing_mm, grid.control_dims);
    if (static_cast<Index>(grid.control_disp.size()) != grid.points() * grid.rank()) {
        throw std::invalid_argument("FFD control displacement length mismatch");
    }
    std::vector<double> dense(static_cast<std::size_t>(shape_size(dims) * L.rank));
    ffd_apply<double>(L, grid.control_disp.data(), dense.data(), false);
    const Index vox = shape_size(dims);
    for (int a = 0; a < L.rank; ++a)
        for (Index v = 0; v < vox; ++v) dense[static_cast<std::size_t>(a * vox + v)] /= spacing[static_cast<std::size_t>(a)];
    return DisplacementField(dims, spacing, std::move(dense));
}

FfdGrid sample_random_ffd(const Spacing &control_spacing_mm, double sigma_mm, const Shape &dims,
                          const Spacing &voxel_spacing, std::uint64_t seed) {
    if (!(sigma_mm >= 0.0)) throw std::invalid_argument("sigma_mm must be non-negative");
    FfdGrid g = FfdGrid::covering(dims, voxel_spacing, control_spacing_mm);
    if (sigma_mm == 0.0) return g;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma_mm);
    for (double &v : g.control_disp) v = normal(rng);
    return g;
}

DisplacementField Translation::to_field(const Shape &dims, const Spacing &spacing) const {
    return DisplacementField::constant(dims, spacing, offset);
}

Image warp_image(const Image &img, const DisplacementField &field) {
    if (img.dims() != field.dims()) throw ShapeError("warp_image: dims mismatch");
    const Tensor<double> it = to_tensor<double>(img);
    const Tensor<double> ft = to_tensor<double>(field);
    const WarpGeometry g = warp_geometry(it.shape(), ft.shape());
    return image_from_tensor(warp_forward(it, ft, g), 0, img.spacing());
}

LabelMap warp_label(const LabelMap &lab, const DisplacementField &field) {
    if (lab.dims() != field.dims()) throw ShapeError("warp_label: dims mismatch");
    const int rank = lab.rank();
    const Index vox = lab.size();
    std::vector<std::int32_t> out(static_cast<std::size_t>(vox));
    std::vector<Index> src(static_cast<std::size_t>(rank));
    for (Index v = 0; v < vox; ++v) {
        const auto coord = unravel(v, lab.dims());
        Index off = 0;
        for (int a = 0; a < rank; ++a) {
            const double p = static_cast<double>(coord[static_cast<std::size_t>(a)]) + field.component(a, v);
            const Index ext = lab.dims()[static_cast<std::size_t>(a)];
            // round half away from zero after clamping into the domain
            const double pc = std::clamp(p, 0.0, static_cast<double>(ext - 1));
            const Index q = static_cast<Index>(std::floor(pc + 0.5));
            off = off * ext + std::min(q, ext - 1);
        }
        out[static_cast<std::size_t>(v)] = lab[off];
    }
    return LabelMap(lab.dims(), lab.spacing(), std::move(out));
}

DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner) {
    if (outer.dims() != inner.dims()) throw ShapeError("compose: dims mismatch");
    const Tensor<double> ot = to_tensor<double>(outer);
    const Tensor<double> it = to_tensor<double>(inner);
    const WarpGeometry g = warp_geometry(ot.shape(), it.shape());
    Tensor<double> moved = warp_forward(ot, it, g);
    for (Index i = 0; i < moved.size(); ++i) moved[i] += it[i];
    return field_from_tensor(moved, 0, inner.spacing());
}

DisplacementField invert_field(const DisplacementField &field, int iterations) {
    DisplacementField v = DisplacementField::zeros(field.dims(), field.spacing());
    for (Index i = 0; i < static_cast<Index>(v.values().size()); ++i) v.data()[static_cast<std::size_t>(i)] = -field.values()[static_cast<std::size_t>(i)];
    const Tensor<double> ft = to_tensor<double>(field);
    for (int it = 0; it < iterations; ++it) {
        const Tensor<double> vt = to_tensor<double>(v);
        const WarpGeometry g = warp_geometry(ft.shape(), vt.shape());
        Tensor<double> u_at = warp_forward(ft, vt, g);
        for (Index i = 0; i < u_at.size(); ++i) v.data()[static_cast<std::size_t>(i)] = -u_at[i];
    }
    return v;
}

Image translate_image(const Image &img, std::span<const double> offset) {
    return warp_image(img, DisplacementField::constant(img.dims(), img.spacing(), offset));
}

namespace ops {

template <typename T>
Var<T> ffd_dense(const Var<T> &ctrl, const Shape &dims, const Spacing &voxel_spacing, const Spacing &control_spacing_mm) {
    const Shape &cs = ctrl.shape();
    if (cs.size() < 3 || cs[0] != 1 || cs[1] != static_cast<Index>(dims.size())) {
        throw ShapeError("ffd_dense: control tensor must be (1, rank, control dims...), got " + shape_string(cs));
    }
    const Shape cdims(cs.begin() + 2, cs.end());
    const FfdLayout L = ffd_layout(dims, voxel_spacing, control_spacing_mm, cdims);
    Shape os{1, static_cast<Index>(dims.size())};
    os.insert(os.end(), dims.begin(), dims.end());
    Tensor<T> out(os);
    ffd_apply<T>(L, ctrl.value().data(), out.data(), false);
    const int ic = ctrl.id();
    return ctrl.tape().record("ffd_dense", std::move(out), {ctrl}, [L, ic](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
        ffd_apply<T>(L, t.grad_buffer(ic).data(), const_cast<T *>(g.data()), true);
    });
}

template <typename T>
Var<T> smoothness_penalty(const Var<T> &field) {
    const Tensor<T> &f = field.value();
    if (f.ndim() < 3 || f.channels() != f.spatial_rank()) throw ShapeError("smoothness_penalty: expected (N, rank, S...)");
    const int rank = f.spatial_rank();
    const Shape sp = f.spatial_shape();
    for (Index e : sp) {
        if (e < 2) throw ShapeError("smoothness_penalty: every spatial extent must be >= 2");
    }
    const Index n = f.batch(), vox = f.spatial_size();
    // stride of each spatial axis in the flat plane
    std::vector<Index> stride(static_cast<std::size_t>(rank), 1);
    for (int a = rank - 2; a >= 0; --a) stride[static_cast<std::size_t>(a)] = stride[static_cast<std::size_t>(a + 1)] * sp[static_cast<std::size_t>(a + 1)];
    std::vector<T> inv_count(static_cast<std::size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        const Index cnt = n * vox / sp[static_cast<std::size_t>(a)] * (sp[static_cast<std::size_t>(a)] - 1);
        inv_count[static_cast<std::size_t>(a)] = T(1) / (static_cast<T>(cnt) * static_cast<T>(rank));
    }
    auto valid = [stride, sp](Index v, int a) { return (v / stride[static_cast<std::size_t>(a)]) % sp[static_cast<std::size_t>(a)] < sp[static_cast<std::size_t>(a)] - 1; };
    T total = 0;
    for (int a = 0; a < rank; ++a) {
        T acc = 0;
        for (Index b = 0; b < n; ++b)
            for (int c = 0; c < rank; ++c) {
                const T *p = f.data() + (b * rank + c) * vox;
                for (Index v = 0; v < vox; ++v) {
                    if (!valid(v, a)) continue;
                    const T diff = p[v + stride[static_cast<std::size_t>(a)]] - p[v];
                    acc += diff * diff;
                }
            }
        total += acc * inv_count[static_cast<std::size_t>(a)];
    }
    const int id = field.id();
    return field.tape().record("smoothness_penalty", Tensor<T>::scalar(total), {field},
        [=](Tape<T> &t, const Tensor<T> &, const Tensor<T> &g) {
            const Tensor<T> &fv = t.value(id);
            Tensor<T> &gf = t.grad_buffer(id);
            for (int a = 0; a < rank; ++a) {
                const T k = T(2) * g[0] * inv_count[static_cast<std::size_t>(a)];
                const Index s = stride[static_cast<std::size_t>(a)];
                for (Index b = 0; b < n; ++b)
                    for (int c = 0; c < rank; ++c) {
                        const Index base = (b * rank + c) * vox;
                        for (Index v = 0; v < vox; ++v) {
                            if (!valid(v, a)) continue;
                            const T diff = fv[base + v + s] - fv[base + v];
                            gf[base + v + s] += k * diff;
                            gf[base + v] -= k * diff;
                        }
                    }
            }
        });
}

template Var<float> warp(const Var<float> &, const Var<float> &);
template Var<double> warp(const Var<double> &, const Var<double> &);
template Var<float> ffd_dense(const Var<float> &, const Shape &, const Spacing &, const Spacing &);
template Var<double> ffd_dense(const Var<double> &, const Shape &, const Spacing &, const Spacing &);
template Var<float> smoothness_penalty(const Var<float> &);
template Var<double> smoothness_penalty(const Var<double> &);

} // namespace ops

} // namespace divreg
