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

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"

#include "divreg/grad_check.hpp"
#include "divreg/ops.hpp"
#include "divreg/transform.hpp"
#include "test_util.hpp"

using namespace divreg;
using divreg::test::random_image;
using divreg::test::random_tensor;

namespace {

Image ramp_x(Index h, Index w) {
    Image img = Image::filled({h, w});
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) img.at({y, x}) = static_cast<float>(x);
    }
    return img;
}

FfdGrid random_grid(const Shape &dims, std::uint64_t seed) {
    return sample_random_ffd(Spacing(dims.size(), 8.0), 3.0, dims, Spacing(dims.size(), 1.0), seed);
}

} // namespace

TEST_CASE("ffd_to_dvf: zero, constant and linear") {
    const Shape dims{23, 17};
    const Spacing vs{1.0, 1.0};
    FfdGrid g = FfdGrid::covering(dims, vs, {8.0, 8.0});
    for (double v : ffd_to_dvf(g, dims, vs).values()) CHECK(v == 0.0);

    // Partition of unity: constant control displacements give a constant field.
    const double c0 = 2.5, c1 = -1.25;
    const Index pts = g.points();
    for (Index i = 0; i < pts; ++i) {
        g.control_disp[static_cast<std::size_t>(i)] = c0;
        g.control_disp[static_cast<std::size_t>(pts + i)] = c1;
    }
    const DisplacementField f = ffd_to_dvf(g, dims, vs);
    for (Index v = 0; v < f.voxels(); ++v) {
        CHECK(f.component(0, v) == doctest::Approx(c0).epsilon(1e-12));
        CHECK(f.component(1, v) == doctest::Approx(c1).epsilon(1e-12));
    }

    // mm to voxels
    const Spacing aniso{2.0, 0.5};
    FfdGrid ga = FfdGrid::covering(dims, aniso, {8.0, 8.0});
    std::fill(ga.control_disp.begin(), ga.control_disp.end(), 1.0);
    const DisplacementField fa = ffd_to_dvf(ga, dims, aniso);
    CHECK(fa.component(0, 5) == doctest::Approx(0.5));
    CHECK(fa.component(1, 5) == doctest::Approx(2.0));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const FfdGrid g1 = random_grid(dims, seed), g2 = random_grid(dims, seed + 100);
        const double a = 0.7, b = -1.9;
        FfdGrid mix = g1;
        for (std::size_t i = 0; i < mix.control_disp.size(); ++i) mix.control_disp[i] = a * g1.control_disp[i] + b * g2.control_disp[i];
        const DisplacementField f1 = ffd_to_dvf(g1, dims, vs), f2 = ffd_to_dvf(g2, dims, vs), fm = ffd_to_dvf(mix, dims, vs);
        for (std::size_t i = 0; i < fm.values().size(); ++i) {
            CHECK(fm.values()[i] == doctest::Approx(a * f1.values()[i] + b * f2.values()[i]).epsilon(1e-12).scale(1.0));
        }
    }
}

TEST_CASE("ffd lattice geometry and coverage") {
    CHECK(ffd_lattice_extent(64, 1.0, 20.0) == 3 + 4);
    CHECK(ffd_lattice_extent(61, 1.0, 20.0) == 3 + 4);
    CHECK(ffd_lattice_extent(1, 1.0, 20.0) == 4);
    double basis[4];
    for (double t : {0.0, 0.3, 0.999}) {
        bspline_basis(t, basis);
        CHECK(basis[0] + basis[1] + basis[2] + basis[3] == doctest::Approx(1.0).epsilon(1e-15));
        // Reproduces linear functions: sum_k B_k(t) * (k - 1) == t.
        CHECK(-basis[0] + basis[2] + 2.0 * basis[3] == doctest::Approx(t).epsilon(1e-15).scale(1.0));
    }
    bspline_basis(0.0, basis);
    CHECK(basis[0] == doctest::Approx(1.0 / 6.0));
    CHECK(basis[1] == doctest::Approx(4.0 / 6.0));
    CHECK(basis[3] == 0.0);

    FfdGrid small = FfdGrid::covering({10, 10}, {1.0, 1.0}, {5.0, 5.0});
    small.control_dims[0] -= 1;
    small.control_disp.resize(static_cast<std::size_t>(2 * small.points()));
    CHECK_THROWS_AS(ffd_to_dvf(small, {10, 10}, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("sample_random_ffd statistics") {
    const FfdGrid zero = sample_random_ffd({20.0, 20.0}, 0.0, {64, 64}, {1.0, 1.0}, 3);
    for (double v : zero.control_disp) CHECK(v == 0.0);
    CHECK(sample_random_ffd({20.0, 20.0}, 6.0, {64, 64}, {1.0, 1.0}, 3).control_disp ==
          sample_random_ffd({20.0, 20.0}, 6.0, {64, 64}, {1.0, 1.0}, 3).control_disp);

    const FfdGrid big = sample_random_ffd({1.0, 1.0}, 6.0, {70, 70}, {1.0, 1.0}, 5);
    REQUIRE(big.control_disp.size() >= 10000);
    double mean = 0.0, sq = 0.0;
    for (double v : big.control_disp) mean += v;
    mean /= static_cast<double>(big.control_disp.size());
    for (double v : big.control_disp) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(big.control_disp.size()));
    CHECK(std::abs(sd - 6.0) < 0.05 * 6.0);
}

TEST_CASE("warp_image oracles") {
    const Image ramp = ramp_x(6, 8);
    CHECK(warp_image(ramp, DisplacementField::zeros({6, 8})) == ramp);

    const std::vector<double> one{0.0, 1.0};
    const Image shifted = warp_image(ramp, DisplacementField::constant({6, 8}, {1.0, 1.0}, one));
    for (Index y = 0; y < 6; ++y) {
        for (Index x = 0; x < 8; ++x) CHECK(shifted.at({y, x}) == static_cast<float>(std::min<Index>(x + 1, 7)));
    }
    const std::vector<double> half{0.0, 0.5};
    const Image h = warp_image(ramp, DisplacementField::constant({6, 8}, {1.0, 1.0}, half));
    for (Index y = 0; y < 6; ++y) {
        for (Index x = 0; x < 7; ++x) CHECK(h.at({y, x}) == doctest::Approx(x + 0.5).epsilon(1e-7));
    }

    // Exact on affine intensity functions for in-domain fractional shifts.
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = u(rng), b = u(rng), c = u(rng);
        Image aff = Image::filled({9, 10});
        for (Index y = 0; y < 9; ++y) {
            for (Index x = 0; x < 10; ++x) aff.at({y, x}) = static_cast<float>(a * y + b * x + c);
        }
        const std::vector<double> s{u(rng), u(rng)};
        const Image out = warp_image(aff, DisplacementField::constant({9, 10}, {1.0, 1.0}, s));
        for (Index y = 2; y < 7; ++y) {
            for (Index x = 2; x < 8; ++x) {
                CHECK(out.at({y, x}) == doctest::Approx(a * (y + s[0]) + b * (x + s[1]) + c).epsilon(1e-6).scale(1.0));
            }
        }
    }

    // Constant images are fixed points of any warp.
    const Image flat = Image::filled({7, 7}, 0.3f);
    const DisplacementField rnd = ffd_to_dvf(random_grid({7, 7}, 9), {7, 7}, {1.0, 1.0});
    CHECK(warp_image(flat, rnd) == flat);

    CHECK_THROWS_AS(warp_image(ramp, DisplacementField::zeros({6, 7})), ShapeError);
}

TEST_CASE("warp_label oracles") {
    LabelMap lab = LabelMap::filled({5, 6});
    for (Index i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::int32_t>((i * 7) % 4);
    CHECK(warp_label(lab, DisplacementField::zeros({5, 6})) == lab);

    const std::vector<double> down{1.0, 0.0};
    const LabelMap s = warp_label(lab, DisplacementField::constant({5, 6}, {1.0, 1.0}, down));
    for (Index y = 0; y < 5; ++y) {
        for (Index x = 0; x < 6; ++x) CHECK(s.at({y, x}) == lab.at({std::min<Index>(y + 1, 4), x}));
    }
    const auto classes = label_classes(lab);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const DisplacementField f = ffd_to_dvf(random_grid({5, 6}, seed), {5, 6}, {1.0, 1.0});
        for (std::int32_t c : label_classes(warp_label(lab, f))) CHECK(std::binary_search(classes.begin(), classes.end(), c));
    }
}

TEST_CASE("compose") {
    const Shape dims{12, 14};
    const DisplacementField zero = DisplacementField::zeros(dims);
    const DisplacementField phi = ffd_to_dvf(random_grid(dims, 4), dims, {1.0, 1.0});
    CHECK(compose(zero, phi) == phi);
    CHECK(compose(phi, zero) == phi);

    const std::vector<double> a{0.5, -1.0}, b{1.25, 0.75};
    const DisplacementField ab = compose(DisplacementField::constant(dims, {1.0, 1.0}, a), DisplacementField::constant(dims, {1.0, 1.0}, b));
    for (Index v = 0; v < ab.voxels(); ++v) {
        CHECK(ab.component(0, v) == doctest::Approx(1.75));
        CHECK(ab.component(1, v) == doctest::Approx(-0.25));
    }

    // Two-pass warp on a smooth image: warp(warp(img, outer), inner) ~ warp(img, compose(outer, inner)).
    const Shape big{32, 32};
    Image smooth = Image::filled(big);
    for (Index y = 0; y < 32; ++y) {
        for (Index x = 0; x < 32; ++x) smooth.at({y, x}) = static_cast<float>(0.5 + 0.25 * std::sin(0.1 * x) * std::cos(0.08 * y));
    }
    const auto small_field = [&](std::uint64_t seed) {
        return ffd_to_dvf(sample_random_ffd({12.0, 12.0}, 0.6, big, {1.0, 1.0}, seed), big, {1.0, 1.0});
    };
    const DisplacementField outer = small_field(1), inner = small_field(2);
    const Image once = warp_image(smooth, compose(outer, inner));
    const Image twice = warp_image(warp_image(smooth, outer), inner);
    for (Index y = 4; y < 28; ++y) {
        for (Index x = 4; x < 28; ++x) CHECK(std::abs(once.at({y, x}) - twice.at({y, x})) < 1e-3);
    }

    // The approximate inverse composes to (nearly) the identity.
    const DisplacementField inv = invert_field(inner);
    const DisplacementField id = compose(inv, inner);
    double worst = 0.0;
    for (Index v = 0; v < id.voxels(); ++v) worst = std::max({worst, std::abs(id.component(0, v)), std::abs(id.component(1, v))});
    CHECK(worst < 0.05);
}

TEST_CASE("translate_image") {
    const Image ramp = ramp_x(4, 9);
    const std::vector<double> off{0.0, 2.0};
    const Image t = translate_image(ramp, off);
    CHECK(t.at({1, 3}) == 5.0f);
    const Translation tr{{1.0, -0.5}};
    const DisplacementField f = tr.to_field({4, 9}, {1.0, 1.0});
    CHECK(f.component(0, 7) == 1.0);
    CHECK(f.component(1, 7) == -0.5);
}

TEST_CASE("smoothness_penalty closed forms") {
    Tape<double> t;
    CHECK(ops::smoothness_penalty(t.constant(Tensor<double>({1, 2, 5, 6}, 3.0))).value().item() == 0.0);

    // Unit shear u_x(y, x) = x on a 2-D grid: the x-difference term is 1, the
    // y-difference term 0, and the penalty averages over both axes.
    Tensor<double> shear({1, 2, 4, 5});
    for (Index y = 0; y < 4; ++y) {
        for (Index x = 0; x < 5; ++x) shear[20 + y * 5 + x] = static_cast<double>(x);
    }
    CHECK(ops::smoothness_penalty(t.constant(shear)).value().item() == doctest::Approx(0.5).epsilon(1e-15));

    Tensor<double> ramp1({1, 1, 7});
    for (Index i = 0; i < 7; ++i) ramp1[i] = static_cast<double>(i);
    CHECK(ops::smoothness_penalty(t.constant(ramp1)).value().item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS(ops::smoothness_penalty(t.constant(Tensor<double>({1, 2, 1, 5}))));
}

TEST_CASE("transform gradients") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        INFO("seed " << seed);
        const int rank = 1 + static_cast<int>(seed % 3);
        Shape spatial;
        for (int i = 0; i < rank; ++i) spatial.push_back(3 + static_cast<Index>((seed + i) % 3));
        Shape img_shape{1 + static_cast<Index>(seed % 2), 1 + static_cast<Index>(seed % 2 == 0)};
        Shape field_shape{img_shape[0], rank};
        img_shape.insert(img_shape.end(), spatial.begin(), spatial.end());
        field_shape.insert(field_shape.end(), spatial.begin(), spatial.end());

        // warp, w.r.t. both operands; fields stay strictly inside the domain
        // so the clamp never engages, and kinks trigger resampling.
        const auto make = [&](std::uint64_t attempt) {
            return std::vector<Tensor<double>>{random_tensor(img_shape, seed * 7 + attempt), random_tensor(field_shape, seed * 11 + attempt, -0.9, 0.9)};
        };
        const auto fwarp = [&](Tape<double> &t, std::span<const Var<double>> x) {
            const Var<double> w = t.constant(random_tensor(img_shape, seed + 99));
            return ops::reduce_sum(ops::mul(ops::warp(x[0], x[1]), w));
        };
        CHECK(grad_check_resampled(fwarp, make).max_rel_error < 1e-4);

        const auto fsmooth = [&](Tape<double> &, std::span<const Var<double>> x) { return ops::smoothness_penalty(x[1]); };
        CHECK(grad_check(fsmooth, make(0)).max_rel_error < 1e-4);

        // ffd_dense w.r.t. control displacements
        const Spacing vs(static_cast<std::size_t>(rank), 1.0), cs(static_cast<std::size_t>(rank), 2.0);
        Shape ctrl_shape{1, rank};
        for (Index d : spatial) ctrl_shape.push_back(ffd_lattice_extent(d, 1.0, 2.0));
        Shape out_shape{1, rank};
        out_shape.insert(out_shape.end(), spatial.begin(), spatial.end());
        const auto fffd = [&](Tape<double> &t, std::span<const Var<double>> x) {
            const Var<double> w = t.constant(random_tensor(out_shape, seed + 5));
            return ops::reduce_sum(ops::mul(ops::ffd_dense(x[0], spatial, vs, cs), w));
        };
        CHECK(grad_check(fffd, {random_tensor(ctrl_shape, seed)}).max_rel_error < 1e-4);
    }
}

TEST_CASE("ffd_dense agrees with ffd_to_dvf") {
    const Shape dims{13, 11};
    const Spacing vs{1.0, 2.0}, cs{6.0, 8.0};
    const FfdGrid g = sample_random_ffd(cs, 4.0, dims, vs, 17);
    Tensor<double> ctrl({1, 2, g.control_dims[0], g.control_dims[1]});
    for (Index k = 0; k < 2; ++k) {
        for (Index i = 0; i < g.points(); ++i) ctrl[k * g.points() + i] = g.control_disp[static_cast<std::size_t>(k * g.points() + i)] / vs[static_cast<std::size_t>(k)];
    }
    Tape<double> t;
    const Tensor<double> dense = ops::ffd_dense(t.constant(ctrl), dims, vs, cs).value();
    const DisplacementField ref = ffd_to_dvf(g, dims, vs);
    for (std::size_t i = 0; i < ref.values().size(); ++i) CHECK(dense[static_cast<Index>(i)] == doctest::Approx(ref.values()[i]).epsilon(1e-12));
}
