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
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"

#include "divreg/grad_check.hpp"
#include "divreg/ops.hpp"
#include "divreg/params.hpp"
#include "test_util.hpp"

using namespace divreg;
using divreg::test::random_tensor;
using divreg::test::TempDir;

namespace {

constexpr int kSeeds = 20;
constexpr double kPrimitiveTol = 1e-4;

// Contracts y against fixed random weights so that every output element
// carries a distinct adjoint.
Var<double> project(Tape<double> &t, const Var<double> &y, std::uint64_t seed) {
    const Var<double> w = t.constant(random_tensor(y.shape(), seed ^ 0xabcdefULL));
    return ops::reduce_sum(ops::mul(y, w));
}

Shape random_shape(std::mt19937_64 &rng, int spatial_rank, Index channels) {
    std::uniform_int_distribution<Index> n(1, 2), s(2, 5);
    Shape shape{n(rng), channels};
    for (int i = 0; i < spatial_rank; ++i) shape.push_back(s(rng));
    return shape;
}

using UnaryOp = std::function<Var<double>(const Var<double> &)>;

void check_unary(const char *name, const UnaryOp &op, double lo = -2.0, double hi = 2.0) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto make = [&](std::uint64_t attempt) {
            std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 131 + attempt);
            const Shape shape = random_shape(rng, 1 + seed % 3, 1 + seed % 2);
            return std::vector<Tensor<double>>{random_tensor(shape, rng(), lo, hi)};
        };
        const auto f = [&](Tape<double> &t, std::span<const Var<double>> x) { return project(t, op(x[0]), static_cast<std::uint64_t>(seed)); };
        const GradCheckResult r = grad_check_resampled(f, make);
        INFO(name << " seed " << seed);
        CHECK(r.max_rel_error < kPrimitiveTol);
        CHECK(r.coords_checked > 0);
    }
}

} // namespace

TEST_CASE("leaky_relu values and slopes") {
    Tape<double> t;
    const Var<double> x = t.variable(Tensor<double>({3}, std::vector<double>{-2.0, 0.0, 3.0}));
    const Var<double> y = ops::leaky_relu(x, 0.2);
    CHECK(y.value()[0] == doctest::Approx(-0.4));
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == 3.0);
    t.backward(ops::reduce_sum(y));
    const Tensor<double> g = t.grad(x);
    CHECK(g[0] == doctest::Approx(0.2));
    CHECK(g[2] == 1.0);
}

TEST_CASE("log_mean_exp closed forms and bounds") {
    {
        Tape<double> t;
        const Var<double> c = t.constant(Tensor<double>({4}, 1.7));
        CHECK(ops::log_mean_exp(c).value().item() == doctest::Approx(1.7).epsilon(1e-15));
        const Var<double> x = t.constant(Tensor<double>({2}, std::vector<double>{0.0, std::log(3.0)}));
        CHECK(ops::log_mean_exp(x).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    {
        // Overflow probe: log_mean_exp(x + s) == log_mean_exp(x) + s.
        Tape<double> t;
        Tensor<double> x = random_tensor({16}, 4);
        const double reference = ops::log_mean_exp(t.constant(x)).value().item();
        for (auto &v : x.values()) v += 1e4;
        const double shifted = ops::log_mean_exp(t.constant(x)).value().item();
        CHECK(std::isfinite(shifted));
        CHECK(shifted - 1e4 == doctest::Approx(reference).epsilon(1e-9));
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tape<double> t;
        const Tensor<double> x = random_tensor({1 + static_cast<Index>(seed % 17)}, seed, -5.0, 5.0);
        const double lme = ops::log_mean_exp(t.constant(x)).value().item();
        const double mx = *std::max_element(x.values().begin(), x.values().end());
        const double mean = std::accumulate(x.values().begin(), x.values().end(), 0.0) / static_cast<double>(x.size());
        CHECK(lme <= mx + 1e-12);
        CHECK(lme >= mean - 1e-12);
    }
}

TEST_CASE("k=1 conv is a per-voxel channel map") {
    SUBCASE("identity kernel") {
        Tape<double> t;
        const Tensor<double> x = random_tensor({2, 3, 4, 5}, 1);
        Tensor<double> w({3, 3, 1, 1});
        for (Index c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
        const Var<double> y = ops::conv(t.constant(x), t.constant(w), t.constant(Tensor<double>({3})));
        CHECK(y.value() == x);
    }
    SUBCASE("matches an explicit matrix multiply") {
        Tape<double> t;
        const Tensor<double> x = random_tensor({2, 3, 4, 5}, 2);
        const Tensor<double> w = random_tensor({4, 3, 1, 1}, 3);
        const Tensor<double> b = random_tensor({4}, 4);
        const Tensor<double> y = ops::conv(t.constant(x), t.constant(w), t.constant(b)).value();
        REQUIRE(y.shape() == Shape{2, 4, 4, 5});
        for (Index n = 0; n < 2; ++n) {
            for (Index o = 0; o < 4; ++o) {
                for (Index v = 0; v < 20; ++v) {
                    double acc = b[o];
                    for (Index c = 0; c < 3; ++c) acc += w[o * 3 + c] * x[(n * 3 + c) * 20 + v];
                    CHECK(y[(n * 4 + o) * 20 + v] == doctest::Approx(acc).epsilon(1e-14));
                }
            }
        }
    }
    SUBCASE("commutes with spatial permutations") {
        Tape<double> t;
        const Tensor<double> x = random_tensor({1, 2, 3, 4}, 5);
        const Tensor<double> w = random_tensor({3, 2, 1, 1}, 6);
        const Tensor<double> b = random_tensor({3}, 7);
        std::vector<Index> perm(12);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
        const Var<double> xv = t.constant(x), wv = t.constant(w), bv = t.constant(b);
        const Tensor<double> a = ops::permute_spatial(ops::conv(xv, wv, bv), {perm}).value();
        const Tensor<double> c = ops::conv(ops::permute_spatial(xv, {perm}), wv, bv).value();
        CHECK(a == c);
    }
    SUBCASE("3x3 conv against a direct loop with zero padding and stride") {
        Tape<double> t;
        const Tensor<double> x = random_tensor({1, 2, 5, 6}, 9);
        const Tensor<double> w = random_tensor({2, 2, 3, 3}, 10);
        const Tensor<double> b = random_tensor({2}, 11);
        for (Index stride : {1, 2}) {
            const Tensor<double> y = ops::conv(t.constant(x), t.constant(w), t.constant(b), stride).value();
            const Index oh = (5 + stride - 1) / stride, ow = (6 + stride - 1) / stride;
            REQUIRE(y.shape() == Shape{1, 2, oh, ow});
            for (Index o = 0; o < 2; ++o) {
                for (Index i = 0; i < oh; ++i) {
                    for (Index j = 0; j < ow; ++j) {
                        double acc = b[o];
                        for (Index c = 0; c < 2; ++c) {
                            for (Index di = 0; di < 3; ++di) {
                                for (Index dj = 0; dj < 3; ++dj) {
                                    const Index yi = i * stride + di - 1, xj = j * stride + dj - 1;
                                    if (yi < 0 || yi >= 5 || xj < 0 || xj >= 6) continue;
                                    acc += w[((o * 2 + c) * 3 + di) * 3 + dj] * x[(c * 5 + yi) * 6 + xj];
                                }
                            }
                        }
                        CHECK(y[(o * oh + i) * ow + j] == doctest::Approx(acc).epsilon(1e-13));
                    }
                }
            }
        }
    }
    SUBCASE("kernels wider than the input see only padding beyond it") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Shape s{1, 2, 1 + static_cast<Index>(seed % 2), 2};
            const std::vector<Tensor<double>> in{random_tensor(s, seed), random_tensor({3, 2, 3, 3}, seed + 1), random_tensor({3}, seed + 2)};
            const auto f = [&](Tape<double> &t, std::span<const Var<double>> x) { return project(t, ops::conv(x[0], x[1], x[2], 1 + static_cast<Index>(seed % 2)), seed); };
            CHECK(grad_check(f, in).max_rel_error < kPrimitiveTol);
        }
        Tape<double> t;
        Tensor<double> w({1, 1, 3, 3});
        w[4] = 2.0;
        w[5] = 1.0;
        const Tensor<double> y = ops::conv(t.constant(Tensor<double>({1, 1, 1, 2}, std::vector<double>{3.0, 5.0})), t.constant(w), t.constant(Tensor<double>({1}))).value();
        CHECK(y[0] == 11.0);
        CHECK(y[1] == 10.0);
    }
    SUBCASE("shape errors") {
        Tape<double> t;
        const Var<double> x = t.constant(Tensor<double>({1, 2, 4, 4}));
        CHECK_THROWS_AS(ops::conv(x, t.constant(Tensor<double>({1, 3, 1, 1})), t.constant(Tensor<double>({1}))), ShapeError);
        CHECK_THROWS_AS(ops::conv(x, t.constant(Tensor<double>({1, 2, 2, 2})), t.constant(Tensor<double>({1}))), ShapeError);
        CHECK_THROWS_AS(ops::conv(x, t.constant(Tensor<double>({1, 2, 3})), t.constant(Tensor<double>({1}))), ShapeError);
        CHECK_THROWS_AS(ops::conv(x, t.constant(Tensor<double>({1, 2, 1, 1})), t.constant(Tensor<double>({2}))), ShapeError);
    }
}

TEST_CASE("elementwise primitive gradients") {
    check_unary("scale", [](const Var<double> &x) { return ops::scale(x, -1.7); });
    check_unary("add_scalar", [](const Var<double> &x) { return ops::add_scalar(x, 0.3); });
    check_unary("square", [](const Var<double> &x) { return ops::square(x); });
    check_unary("exp", [](const Var<double> &x) { return ops::exp(x); });
    check_unary("log", [](const Var<double> &x) { return ops::log(x); }, 0.2, 3.0);
    check_unary("sigmoid", [](const Var<double> &x) { return ops::sigmoid(x); });
    check_unary("leaky_relu", [](const Var<double> &x) { return ops::leaky_relu(x, 0.2); });
    check_unary("relu", [](const Var<double> &x) { return ops::relu(x); });
    check_unary("avg_pool", [](const Var<double> &x) {
        // Trim to even extents first so the pool factor divides.
        return ops::avg_pool(ops::upsample_nearest(x, 2), 2);
    });
    check_unary("upsample_nearest", [](const Var<double> &x) { return ops::upsample_nearest(x, 2); });
    check_unary("global_avg_pool", [](const Var<double> &x) { return ops::global_avg_pool(x); });
    check_unary("reduce_mean", [](const Var<double> &x) { return ops::reduce_mean(x); });
    check_unary("log_mean_exp", [](const Var<double> &x) { return ops::log_mean_exp(x); });
    check_unary("softmax axis 1", [](const Var<double> &x) { return ops::softmax(x, 1); });
    check_unary("softmax last axis", [](const Var<double> &x) { return ops::softmax(x, x.value().ndim() - 1); });
    check_unary("permute_spatial", [](const Var<double> &x) {
        const Index n = x.value().batch(), s = x.value().spatial_size();
        std::vector<std::vector<Index>> perm(static_cast<std::size_t>(n), std::vector<Index>(static_cast<std::size_t>(s)));
        std::mt19937_64 rng(static_cast<std::uint64_t>(s));
        for (auto &p : perm) {
            std::iota(p.begin(), p.end(), 0);
            std::shuffle(p.begin(), p.end(), rng);
        }
        return ops::permute_spatial(x, perm);
    });
}

TEST_CASE("binary and parametric primitive gradients") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const int rank = 1 + seed % 3;
        const Shape shape = random_shape(rng, rank, 2);
        INFO("seed " << seed);

        const auto pair = std::vector<Tensor<double>>{random_tensor(shape, rng()), random_tensor(shape, rng())};
        for (int which = 0; which < 3; ++which) {
            const auto f = [&](Tape<double> &t, std::span<const Var<double>> x) {
                const Var<double> y = which == 0 ? ops::add(x[0], x[1]) : which == 1 ? ops::sub(x[0], x[1]) : ops::mul(x[0], x[1]);
                return project(t, y, static_cast<std::uint64_t>(seed));
            };
            CHECK(grad_check(f, pair).max_rel_error < kPrimitiveTol);
        }

        // conv: k in {1, 3}, stride in {1, 2}
        const Index ci = shape[1], co = 1 + seed % 3;
        Shape wide = shape;
        for (int i = 0; i < rank; ++i) wide[2 + static_cast<std::size_t>(i)] += 1;
        for (Index k : {1, 3}) {
            for (Index stride : {1, 2}) {
                Shape wshape{co, ci};
                for (int i = 0; i < rank; ++i) wshape.push_back(k);
                const std::vector<Tensor<double>> in{random_tensor(k == 1 ? shape : wide, rng()), random_tensor(wshape, rng()), random_tensor({co}, rng())};
                const auto f = [&](Tape<double> &t, std::span<const Var<double>> x) {
                    return project(t, ops::conv(x[0], x[1], x[2], stride), static_cast<std::uint64_t>(seed));
                };
                INFO("conv k=" << k << " stride=" << stride);
                CHECK(grad_check(f, in).max_rel_error < kPrimitiveTol);
            }
        }

        // linear
        const Index n = shape[0], in_f = 2 + seed % 4, out_f = 1 + seed % 3;
        const std::vector<Tensor<double>> lin{random_tensor({n, in_f}, rng()), random_tensor({out_f, in_f}, rng()), random_tensor({out_f}, rng())};
        const auto flin = [&](Tape<double> &t, std::span<const Var<double>> x) {
            return project(t, ops::linear(x[0], x[1], x[2]), static_cast<std::uint64_t>(seed));
        };
        CHECK(grad_check(flin, lin).max_rel_error < kPrimitiveTol);

        // concat_channels
        Shape other = shape;
        other[1] = 1 + seed % 2;
        const std::vector<Tensor<double>> cat{random_tensor(shape, rng()), random_tensor(other, rng())};
        const auto fcat = [&](Tape<double> &t, std::span<const Var<double>> x) {
            return project(t, ops::concat_channels<double>({x[0], x[1], x[0]}), static_cast<std::uint64_t>(seed));
        };
        CHECK(grad_check(fcat, cat).max_rel_error < kPrimitiveTol);

        // scale_channels
        const std::vector<Tensor<double>> sc{random_tensor(shape, rng()), random_tensor({shape[0], shape[1]}, rng())};
        const auto fsc = [&](Tape<double> &t, std::span<const Var<double>> x) {
            return project(t, ops::scale_channels(x[0], x[1]), static_cast<std::uint64_t>(seed));
        };
        CHECK(grad_check(fsc, sc).max_rel_error < kPrimitiveTol);

        // avg_pool on even extents directly
        Shape even = shape;
        for (int i = 0; i < rank; ++i) even[2 + static_cast<std::size_t>(i)] = 2 * (1 + static_cast<Index>(rng() % 3));
        const auto fpool = [&](Tape<double> &t, std::span<const Var<double>> x) {
            return project(t, ops::avg_pool(x[0], 2), static_cast<std::uint64_t>(seed));
        };
        CHECK(grad_check(fpool, {random_tensor(even, rng())}).max_rel_error < kPrimitiveTol);
    }
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = [](Tape<double> &, const Var<double> &x) { return ops::reduce_sum(ops::square(x)); };
        CHECK(grad_check(f, random_tensor({3, 7}, seed)).max_rel_error < 1e-8);
    }
    const auto nonscalar = [](Tape<double> &, const Var<double> &x) { return ops::square(x); };
    CHECK_THROWS(grad_check(nonscalar, random_tensor({3}, 1)));
}

TEST_CASE("grad_check detects kinks") {
    const auto f = [](Tape<double> &, const Var<double> &x) { return ops::reduce_sum(ops::relu(x)); };
    const GradCheckResult r = grad_check(f, Tensor<double>({2}, std::vector<double>{0.0, 1.0}));
    CHECK(r.kink_detected);
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("tape bookkeeping") {
    Tape<double> t;
    const Var<double> x = t.variable(random_tensor({4}, 1));
    Var<double> y = x;
    for (int i = 0; i < 10; ++i) y = ops::sigmoid(ops::scale(y, 1.1));
    const Var<double> out = ops::reduce_sum(y);
    const std::size_t n = t.size();
    t.backward(out);
    // One adjoint evaluation per differentiable node, never more.
    CHECK(t.adjoint_evaluations() == n - 1);
    CHECK_THROWS(t.backward(y));

    const Var<double> c = t.constant(Tensor<double>({2}, 1.0));
    CHECK_FALSE(t.requires_grad(c));
    CHECK(t.requires_grad(x));

    CHECK_THROWS_AS(t.variable(Tensor<double>({1}, std::vector<double>{NAN})), NonFiniteError);
    CHECK_THROWS_AS(ops::exp(t.constant(Tensor<double>({1}, 1000.0))), NonFiniteError);
    CHECK_THROWS_AS(ops::log(t.constant(Tensor<double>({1}, 0.0))), std::domain_error);
    CHECK_THROWS_AS(ops::add(x, t.constant(Tensor<double>({3}))), ShapeError);
}

TEST_CASE("checkpoint files round trip") {
    TempDir dir("ckpt");
    Checkpoint ck;
    ck.tensors["a.w"] = random_tensor({2, 3, 1}, 1);
    ck.tensors["b"] = random_tensor({5}, 2);
    ck.meta = {{"kind", "test"}, {"n", 3}};
    for (const char *dtype : {"f64", "f32"}) {
        ck.dtype = dtype;
        save_checkpoint(dir / "c.ckpt", ck);
        const Checkpoint back = load_checkpoint(dir / "c.ckpt");
        CHECK(back.meta == ck.meta);
        CHECK(back.dtype == dtype);
        REQUIRE(back.tensors.size() == 2);
        for (const auto &[name, tensor] : ck.tensors) {
            const Tensor<double> &got = back.tensors.at(name);
            REQUIRE(got.shape() == tensor.shape());
            for (Index i = 0; i < tensor.size(); ++i) {
                const double want = std::string(dtype) == "f64" ? tensor[i] : static_cast<double>(static_cast<float>(tensor[i]));
                CHECK(got[i] == want);
            }
        }
    }
    std::ofstream(dir / "bad.ckpt") << "not json\n";
    CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}
