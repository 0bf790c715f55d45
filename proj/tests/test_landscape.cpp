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
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "divreg/landscape.hpp"
#include "divreg/phantom.hpp"
#include "divreg/transform.hpp"
#include "test_util.hpp"

using namespace divreg;

namespace {

PhantomPair pair32(std::uint64_t seed, ModalityMap map = ModalityMap::identity) {
    PhantomConfig pc;
    pc.dims = {32, 32};
    pc.ffd_sigma_mm = 0.0;
    pc.noise_sigma = 0.0;
    pc.modality_map = map;
    pc.seed = seed;
    return gen_phantom_pair(pc);
}

double value_at(const LandscapeTable &t, const std::string &metric, double dx, double dy) {
    for (const auto &r : t.rows) {
        if (r.metric == metric && r.dx == dx && r.dy == dy) return r.value;
    }
    throw std::runtime_error("missing row");
}

} // namespace

TEST_CASE("classic landscapes") {
    const PhantomPair p = pair32(2);
    LandscapeConfig cfg;
    cfg.max_offset = 6;
    cfg.step = 2;
    cfg.metrics = {"ssd", "lncc", "mi", "dice"};
    SUBCASE("a self pair peaks at zero offset") {
        const LandscapeTable t = landscape(p.fixed, p.fixed, cfg, &p.fixed_labels, &p.fixed_labels);
        CHECK(t.offsets == std::vector<double>{-6, -4, -2, 0, 2, 4, 6});
        CHECK(t.rows.size() == 7 * 7 * 4);
        for (const auto &m : cfg.metrics) {
            INFO(m);
            const auto best = t.best_offset(m);
            CHECK(best.first == 0.0);
            CHECK(best.second == 0.0);
        }
        CHECK(value_at(t, "ssd", 0, 0) == 0.0);
        CHECK(value_at(t, "dice", 0, 0) == 1.0);
        CHECK(value_at(t, "lncc", 0, 0) > value_at(t, "lncc", 2, 0));
    }
    SUBCASE("a translated pair peaks at the translation") {
        const std::vector<double> shift{2.0, -4.0};
        const Image fixed = translate_image(p.fixed, shift);
        const LabelMap fixed_labels = warp_label(p.fixed_labels, DisplacementField::constant({32, 32}, {1.0, 1.0}, shift));
        const LandscapeTable t = landscape(fixed, p.fixed, cfg, &fixed_labels, &p.fixed_labels);
        for (const auto &m : cfg.metrics) {
            INFO(m);
            const auto best = t.best_offset(m);
            CHECK(best.first == -4.0);
            CHECK(best.second == 2.0);
        }
    }
    SUBCASE("a non-monotone intensity map still peaks for mi but not ssd") {
        const PhantomPair q = pair32(2, ModalityMap::nonmono);
        const LandscapeTable t = landscape(q.fixed, q.moving, cfg, &q.fixed_labels, &q.moving_labels);
        const auto best = t.best_offset("mi");
        CHECK(best.first == 0.0);
        CHECK(best.second == 0.0);
        CHECK(t.best_offset("ssd") != std::make_pair(0.0, 0.0));
    }
}

TEST_CASE("landscape output files") {
    const PhantomPair p = pair32(3);
    LandscapeConfig cfg;
    cfg.max_offset = 4;
    cfg.step = 4;
    cfg.metrics = {"ssd"};
    const LandscapeTable t = landscape(p.fixed, p.moving, cfg);
    test::TempDir dir("landscape");
    t.write_csv(dir / "l.csv");
    t.write_matrix(dir / "l.dat", "ssd");
    std::ifstream csv(dir / "l.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "dx,dy,metric,value");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 9);
    std::ifstream dat(dir / "l.dat");
    std::vector<std::vector<double>> m;
    while (std::getline(dat, line)) {
        std::stringstream ss(line);
        m.emplace_back();
        for (double v; ss >> v;) m.back().push_back(v);
    }
    REQUIRE(m.size() == 3);
    CHECK(m[0].size() == 3);
    // rows follow dy, columns dx
    CHECK(m[0][2] == doctest::Approx(value_at(t, "ssd", 4, -4)));
    CHECK(m[2][0] == doctest::Approx(value_at(t, "ssd", -4, 4)));
    CHECK_THROWS_AS(t.best_offset("lncc"), std::invalid_argument);
}

TEST_CASE("landscape validation") {
    const PhantomPair p = pair32(4);
    LandscapeConfig cfg;
    cfg.metrics = {"ssd"};
    cfg.max_offset = 9;
    CHECK_THROWS_AS(landscape(p.fixed, p.moving, cfg), std::invalid_argument);
    cfg.max_offset = 8;
    CHECK_NOTHROW(landscape(p.fixed, p.moving, cfg));
    cfg.metrics = {"dice"};
    CHECK_THROWS_AS(landscape(p.fixed, p.moving, cfg), std::invalid_argument);
    cfg.metrics = {"ncc"};
    CHECK_THROWS_AS(landscape(p.fixed, p.moving, cfg), std::invalid_argument);
    cfg.metrics = {"ssd"};
    cfg.step = 0;
    CHECK_THROWS_AS(landscape(p.fixed, p.moving, cfg), std::invalid_argument);
    const Image other = Image::filled({32, 16});
    cfg.step = 2;
    CHECK_THROWS_AS(landscape(p.fixed, other, cfg), ShapeError);
    const nlohmann::json j = cfg.to_json();
    CHECK(LandscapeConfig::from_json(j).to_json() == j);
}

TEST_CASE("neural landscape on a self pair") {
    const PhantomPair p = pair32(5);
    LandscapeConfig cfg;
    cfg.max_offset = 8;
    cfg.step = 8;
    cfg.metrics = {"dv"};
    cfg.dv.net.branch_channels = {8, 8};
    cfg.dv.net.head_channels = {16, 1};
    cfg.dv.warmup_steps = 300;
    cfg.dv.steps_per_offset = 50;
    cfg.dv.eval_shuffles = 4;
    cfg.dv.seed = 1;
    const LandscapeTable t = landscape(p.fixed, p.fixed, cfg);
    CHECK(t.rows.size() == 9);
    const auto best = t.best_offset("dv");
    CHECK(best.first == 0.0);
    CHECK(best.second == 0.0);
    const LandscapeTable again = landscape(p.fixed, p.fixed, cfg);
    for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(t.rows[i].value == again.rows[i].value);
}
