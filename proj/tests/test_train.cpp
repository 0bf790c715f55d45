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
#include <set>

#include "doctest.h"

#include "divreg/augment.hpp"
#include "divreg/metrics.hpp"
#include "divreg/phantom.hpp"
#include "divreg/train.hpp"
#include "divreg/transform.hpp"
#include "test_util.hpp"

using namespace divreg;

namespace {

ParamSet<double> single(double v) { return {{"w", Tensor<double>({1}, std::vector<double>{v})}}; }

TrainConfig small_config(Metric loss) {
    TrainConfig cfg;
    cfg.loss = loss;
    cfg.iterations = 4;
    cfg.batch = 2;
    cfg.seed = 5;
    cfg.regnet.encoder_channels = {4, 4};
    cfg.regnet.decoder_channels = {4, 4};
    cfg.regnet.se_reduction = 2;
    cfg.kldivnet.branch_channels = {4, 4};
    cfg.kldivnet.head_channels = {4, 1};
    return cfg;
}

std::vector<PairRecord> small_pairs(Index n, std::uint64_t seed) {
    std::vector<PairRecord> out;
    for (Index i = 0; i < n; ++i) {
        PhantomConfig pc;
        pc.dims = {16, 16};
        pc.ffd_spacing_mm = 8.0;
        pc.ffd_sigma_mm = 2.0;
        pc.seed = seed + static_cast<std::uint64_t>(i);
        const PhantomPair p = gen_phantom_pair(pc);
        out.push_back({"pair_" + std::to_string(i), p.fixed, p.moving, p.fixed_labels, p.moving_labels, p.truth});
    }
    return out;
}

} // namespace

TEST_CASE("adam matches a scalar reference") {
    ParamSet<double> p = single(0.5);
    AdamState<double> st;
    const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
    double x = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 50; ++t) {
        const double g = std::sin(0.3 * t) + 0.2 * x;
        adam_step(p, single(g), st, cfg);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.at("w")[0] == doctest::Approx(x).epsilon(1e-12));
    }
    CHECK(st.step == 50);
}

TEST_CASE("adam invariants") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamSet<double> p = single(1.25);
        AdamState<double> st;
        for (int i = 0; i < 10; ++i) adam_step(p, single(0.0), st);
        CHECK(p.at("w")[0] == 1.25);
    }
    SUBCASE("constant gradient moves by lr per step") {
        ParamSet<double> p = single(0.0);
        AdamState<double> st;
        const AdamConfig cfg{0.002};
        double prev = 0.0;
        for (int i = 0; i < 1000; ++i) {
            adam_step(p, single(3.0), st, cfg);
            const double step = prev - p.at("w")[0];
            CHECK(std::abs(step - 0.002) < 1e-3 * 0.002);
            prev = p.at("w")[0];
        }
    }
    SUBCASE("deterministic") {
        ParamSet<double> a{{"w", test::random_tensor<double>({3, 4}, 1)}};
        ParamSet<double> b = a;
        AdamState<double> sa, sb;
        for (int i = 0; i < 20; ++i) {
            const ParamSet<double> g{{"w", test::random_tensor<double>({3, 4}, 100 + i)}};
            adam_step(a, g, sa);
            adam_step(b, g, sb);
        }
        CHECK(a.at("w") == b.at("w"));
    }
    SUBCASE("misshaped gradient") {
        ParamSet<double> p = single(0.0);
        AdamState<double> st;
        CHECK_THROWS_AS(adam_step(p, ParamSet<double>{{"w", Tensor<double>({2})}}, st), ShapeError);
        CHECK_THROWS_AS(adam_step(p, ParamSet<double>{}, st), ShapeError);
    }
}

TEST_CASE("ema") {
    SUBCASE("empty ema copies the parameters") {
        ParamSet<double> e;
        ema_update(e, single(2.0), 0.9);
        CHECK(e.at("w")[0] == 2.0);
    }
    SUBCASE("decay zero tracks the parameters") {
        ParamSet<double> e = single(7.0);
        ema_update(e, single(-1.5), 0.0);
        CHECK(e.at("w")[0] == -1.5);
    }
    SUBCASE("constant input converges geometrically") {
        ParamSet<double> e = single(0.0);
        for (int i = 0; i < 100; ++i) ema_update(e, single(1.0), 0.9);
        CHECK(e.at("w")[0] == doctest::Approx(1.0 - std::pow(0.9, 100)).epsilon(1e-12));
    }
    SUBCASE("alternating input averages out") {
        ParamSet<double> e = single(0.0);
        for (int i = 0; i < 1000; ++i) ema_update(e, single(i % 2 == 0 ? 1.0 : -1.0), 0.99);
        CHECK(std::abs(e.at("w")[0]) < 0.02);
    }
    SUBCASE("bad decay") {
        ParamSet<double> e = single(0.0);
        CHECK_THROWS_AS(ema_update(e, single(1.0), 1.0), std::invalid_argument);
        CHECK_THROWS_AS(ema_update(e, single(1.0), -0.1), std::invalid_argument);
    }
}

TEST_CASE("adam state export round trip") {
    ParamSet<float> p{{"a", test::random_tensor<float>({2, 3}, 3)}, {"b", test::random_tensor<float>({4}, 4)}};
    AdamState<float> st;
    adam_step(p, ParamSet<float>{{"a", test::random_tensor<float>({2, 3}, 5)}, {"b", test::random_tensor<float>({4}, 6)}}, st);
    ParamSet<double> tensors;
    nlohmann::json meta;
    export_adam(st, "opt", tensors, meta);
    const AdamState<float> back = import_adam<float>(tensors, "opt", meta);
    CHECK(back.step == 1);
    CHECK(back.m == st.m);
    CHECK(back.v == st.v);
}

TEST_CASE("augmentation") {
    const auto pairs = small_pairs(1, 9);
    const PairRecord &p = pairs[0];
    SUBCASE("zero magnitude is the identity") {
        AugmentInput f{p.fixed, p.fixed_labels}, m{p.moving, p.moving_labels};
        augment_pair(f, m, 1, AugmentConfig{0.0, 0.0});
        CHECK(f.image == p.fixed);
        CHECK(m.image == p.moving);
        CHECK(*f.labels == *p.fixed_labels);
    }
    SUBCASE("labels keep their id set and the result is reproducible") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            AugmentInput f{p.fixed, p.fixed_labels}, m{p.moving, p.moving_labels};
            AugmentInput f2 = f, m2 = m;
            augment_pair(f, m, seed);
            augment_pair(f2, m2, seed);
            CHECK(f.image == f2.image);
            CHECK(m.labels == m2.labels);
            const auto before = label_classes(*p.fixed_labels);
            for (std::int32_t c : label_classes(*f.labels)) CHECK(std::find(before.begin(), before.end(), c) != before.end());
        }
    }
    SUBCASE("rigid field of a pure rotation preserves distances to the centre") {
        const std::vector<double> zero{0.0, 0.0};
        const DisplacementField f = rigid_field({9, 9}, {1.0, 1.0}, 0.4, zero);
        for (Index v = 0; v < f.voxels(); ++v) {
            const auto q = unravel(v, {9, 9});
            const double y = static_cast<double>(q[0]) - 4.0, x = static_cast<double>(q[1]) - 4.0;
            const double y2 = y + f.component(0, v), x2 = x + f.component(1, v);
            CHECK(std::hypot(y2, x2) == doctest::Approx(std::hypot(y, x)).epsilon(1e-12));
        }
        CHECK(f.component(0, 4 * 9 + 4) == doctest::Approx(0.0));
    }
}

TEST_CASE("train config json") {
    TrainConfig cfg = small_config(Metric::mi);
    cfg.augment = true;
    cfg.smooth_weight = 0.25;
    cfg.denominator_ema = true;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    nlohmann::json bad = cfg.to_json();
    bad["learning_rate"] = 0.1;
    CHECK_THROWS_AS(TrainConfig::from_json(bad), std::invalid_argument);
    bad = cfg.to_json();
    bad["ema_decay"] = 1.0;
    CHECK_THROWS_AS(TrainConfig::from_json(bad), std::invalid_argument);
    bad = cfg.to_json();
    bad["loss"] = "bogus";
    CHECK_THROWS(TrainConfig::from_json(bad));
}

TEST_CASE("training loop") {
    const auto pairs = small_pairs(3, 20);
    SUBCASE("sample_batch depends only on seed and iteration") {
        TrainConfig cfg = small_config(Metric::ssd);
        cfg.augment = true;
        const auto a = sample_batch<double>(pairs, cfg, 3);
        const auto b = sample_batch<double>(pairs, cfg, 3);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
        CHECK(a.first.shape() == Shape{2, 1, 16, 16});
        CHECK_FALSE(sample_batch<double>(pairs, cfg, 4).first == a.first);
        CHECK_THROWS_AS(sample_batch<double>({}, cfg, 0), std::invalid_argument);
    }
    SUBCASE("one backward pass fills both gradient sets") {
        const TrainConfig cfg = small_config(Metric::dv);
        TrainState<double> st = init_train_state<double>(cfg);
        CHECK_FALSE(st.critic.empty());
        const auto [m, f] = sample_batch<double>(pairs, cfg, 0);
        const StepGradients<double> g = loss_gradients(st, cfg, m, f, 0);
        CHECK(g.regnet.size() == st.regnet.size());
        CHECK(g.critic.size() == st.critic.size());
        double rn = 0.0, cn = 0.0;
        for (const auto &[k, t] : g.regnet) for (double v : t.values()) rn += v * v;
        for (const auto &[k, t] : g.critic) for (double v : t.values()) cn += v * v;
        CHECK(rn > 0.0);
        CHECK(cn > 0.0);
        CHECK(g.record.loss == doctest::Approx(-(g.record.s_joint - g.record.s_marginal)).epsilon(1e-12));
    }
    SUBCASE("classic losses carry no critic") {
        for (Metric l : {Metric::ssd, Metric::lncc, Metric::mi}) {
            const TrainState<double> st = init_train_state<double>(small_config(l));
            CHECK(st.critic.empty());
        }
    }
    SUBCASE("zero iterations keeps the identity") {
        TrainConfig cfg = small_config(Metric::dv);
        cfg.iterations = 0;
        TrainState<double> st = init_train_state<double>(cfg);
        train_divregnet(pairs, cfg, st);
        CHECK(st.iteration == 0);
        for (const auto &p : pairs) {
            const DisplacementField u = predict_field(st.regnet_ema, cfg.regnet, p.moving, p.fixed);
            CHECK(u.mean_abs() == 0.0);
            const LabelMap moved = warp_label(*p.moving_labels, u);
            CHECK(mean_dice(*p.fixed_labels, moved) == mean_dice(*p.fixed_labels, *p.moving_labels));
        }
    }
    SUBCASE("reruns are bit-identical") {
        for (Metric l : {Metric::dv, Metric::mi}) {
            const TrainConfig cfg = small_config(l);
            TrainState<double> a = init_train_state<double>(cfg), b = init_train_state<double>(cfg);
            train_divregnet(pairs, cfg, a);
            train_divregnet(pairs, cfg, b);
            CHECK(a.regnet == b.regnet);
            CHECK(a.critic_ema == b.critic_ema);
            REQUIRE(a.history.size() == 4);
            for (std::size_t i = 0; i < 4; ++i) CHECK(a.history[i].loss == b.history[i].loss);
        }
    }
    SUBCASE("resuming matches an uninterrupted run") {
        test::TempDir dir("train");
        TrainConfig cfg = small_config(Metric::dv);
        cfg.checkpoint_every = 2;
        cfg.denominator_ema = true;
        TrainState<double> full = init_train_state<double>(cfg);
        int calls = 0;
        train_divregnet<double>(pairs, cfg, full, [&](const TrainState<double> &s) {
            ++calls;
            if (s.iteration == 2) save_train_state(dir / "mid.ckpt", s, cfg);
        });
        CHECK(calls == 2);
        TrainConfig loaded_cfg;
        TrainState<double> resumed = load_train_state<double>(dir / "mid.ckpt", &loaded_cfg);
        CHECK(resumed.iteration == 2);
        CHECK(loaded_cfg.to_json() == cfg.to_json());
        resumed.history = std::vector<TrainRecord>(full.history.begin(), full.history.begin() + 2);
        train_divregnet(pairs, loaded_cfg, resumed);
        CHECK(resumed.iteration == 4);
        CHECK(resumed.regnet == full.regnet);
        CHECK(resumed.critic == full.critic);
        CHECK(resumed.regnet_ema == full.regnet_ema);
        CHECK(full.denominator.started);
        CHECK(resumed.denominator.log_mean == full.denominator.log_mean);
        CHECK(resumed.history.back().iteration == 3);
    }
    SUBCASE("alternating updates leave one network untouched per step") {
        TrainConfig cfg = small_config(Metric::dv);
        cfg.alternating = true;
        cfg.iterations = 1;
        TrainState<double> st = init_train_state<double>(cfg);
        const ParamSet<double> reg0 = st.regnet, crit0 = st.critic;
        train_divregnet(pairs, cfg, st);
        CHECK(st.regnet == reg0);
        CHECK_FALSE(st.critic == crit0);
    }
}

TEST_CASE("checkpoints and history files") {
    test::TempDir dir("ckpt");
    const TrainConfig cfg = small_config(Metric::ssd);
    const TrainState<float> st = init_train_state<float>(cfg);
    SUBCASE("registration network round trip") {
        save_regnet(dir / "r.ckpt", st.regnet, cfg.regnet);
        RegNetConfig arch;
        const ParamSet<float> back = load_regnet<float>(dir / "r.ckpt", arch);
        CHECK(back == st.regnet);
        CHECK(arch.to_json() == cfg.regnet.to_json());
    }
    SUBCASE("wrong kind, dtype and shape are rejected") {
        save_kldivnet(dir / "k.ckpt", init_kldivnet<float>(cfg.kldivnet, 1), cfg.kldivnet);
        RegNetConfig arch;
        CHECK_THROWS(load_regnet<float>(dir / "k.ckpt", arch));
        save_train_state(dir / "s.ckpt", st, cfg);
        CHECK_THROWS(load_train_state<double>(dir / "s.ckpt"));
        CHECK(load_train_state<float>(dir / "s.ckpt").regnet == st.regnet);
        ParamSet<float> broken = st.regnet;
        broken.begin()->second = Tensor<float>({1});
        save_regnet(dir / "b.ckpt", broken, cfg.regnet);
        CHECK_THROWS_AS(load_regnet<float>(dir / "b.ckpt", arch), ShapeError);
    }
    SUBCASE("history csv") {
        const std::vector<TrainRecord> h{{0, 1.5, 0.25, -0.125, 0.0}, {1, -2.0, 3.0, 1.0, 0.01}};
        write_train_history(dir / "h.csv", h);
        std::ifstream in(dir / "h.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "iteration,loss,S_joint_term,S_marg_term,mean_abs_disp");
        const auto back = read_train_history(dir / "h.csv");
        REQUIRE(back.size() == 2);
        CHECK(back[1].loss == -2.0);
        CHECK(back[1].mean_abs_disp == 0.01);
        CHECK(back[0].s_marginal == -0.125);
    }
}
