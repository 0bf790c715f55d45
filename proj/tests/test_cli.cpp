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
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "divreg/dataset.hpp"
#include "divreg/kldivnet.hpp"
#include "divreg/metaimage.hpp"
#include "test_util.hpp"

using namespace divreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string &args) {
    const std::string cmd = std::string(DIVREG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path &p) { return json::parse(slurp(p)); }

json without_timestamps(json manifest) {
    manifest.erase("timestamps");
    return manifest;
}

std::string q(const fs::path &p) { return "'" + p.string() + "'"; }

// Small dataset and a registration network sized for 32x32 inputs.
struct Fixture {
    test::TempDir dir{"cli"};
    fs::path data = dir / "data";
    fs::path net_cfg = dir / "net.json";

    Fixture() {
        REQUIRE(run("gen-phantom --count 10 --ratios 6,2,2 --dims 32,32 --ffd-spacing 12 --ffd-sigma 3 --seed 4 --out " + q(data)) == 0);
        std::ofstream(net_cfg) << json{{"regnet", {{"encoder_channels", {4, 4}}, {"decoder_channels", {4, 4}}, {"se_reduction", 2}}},
                                       {"kldivnet", {{"branch_channels", {4, 4}}, {"head_channels", {4, 1}}}},
                                       {"batch", 2}}
                                      .dump();
    }

    std::string train_args(const std::string &loss, const fs::path &out, int iterations = 4) const {
        return "train --config " + q(net_cfg) + " --data " + q(data) + " --loss " + loss + " --iterations " + std::to_string(iterations) +
               " --out " + q(out);
    }
};

} // namespace

TEST_CASE("gen-phantom") {
    Fixture fx;
    CHECK(list_pairs(fx.data, "train").size() == 6);
    CHECK(list_pairs(fx.data, "val").size() == 2);
    CHECK(list_pairs(fx.data, "test").size() == 2);
    const json ph = read_json(fx.data / "phantom.json");
    CHECK(ph["splits"]["train"]["count"] == 6);
    const json man = read_json(fx.data / "run_manifest.json");
    CHECK(man["command"] == "gen-phantom");
    CHECK(man["seed"] == 4);
    CHECK(man.contains("version"));
    CHECK(man["timestamps"].contains("start"));

    SUBCASE("reruns are byte-identical") {
        const fs::path again = fx.dir / "again";
        REQUIRE(run("gen-phantom --config " + q(fx.data / "run_manifest.json") + " --out " + q(again)) == 0);
        for (const auto &split : {"train", "val", "test"}) {
            const auto a = list_pairs(fx.data, split), b = list_pairs(again, split);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                for (const auto &f : {"fixed.mha", "moving.mha", "fixed_labels.mha", "moving_labels.mha", "truth_field.mha"}) {
                    CHECK(slurp(a[i] / f) == slurp(b[i] / f));
                }
            }
        }
        json m2 = read_json(again / "run_manifest.json");
        CHECK(m2["config"]["count"] == man["config"]["count"]);
    }
    SUBCASE("bad arguments fail") {
        CHECK(run("gen-phantom --modality sideways --out " + q(fx.dir / "x")) != 0);
        CHECK(run("gen-phantom --count -1 --out " + q(fx.dir / "x")) != 0);
        std::ofstream(fx.dir / "bad.json") << R"({"count": 3, "colour": "red"})";
        CHECK(run("gen-phantom --config " + q(fx.dir / "bad.json") + " --out " + q(fx.dir / "x")) != 0);
        CHECK(run("no-such-command") != 0);
    }
}

TEST_CASE("train, register and evaluate") {
    Fixture fx;
    const fs::path dv = fx.dir / "dv";
    REQUIRE(run(fx.train_args("dv", dv)) == 0);
    for (const auto &f : {"train_state.ckpt", "history.csv", "regnet_raw.ckpt", "regnet_ema.ckpt", "kldivnet_raw.ckpt", "kldivnet_ema.ckpt",
                          "run_manifest.json"}) {
        CHECK(fs::exists(dv / f));
    }
    std::ifstream hist(dv / "history.csv");
    std::string header;
    std::getline(hist, header);
    CHECK(header == "iteration,loss,S_joint_term,S_marg_term,mean_abs_disp");

    SUBCASE("classic losses train and unknown ones are rejected") {
        for (const auto &loss : {"lncc", "mi", "ssd"}) CHECK(run(fx.train_args(loss, fx.dir / loss, 2)) == 0);
        CHECK_FALSE(fs::exists(fx.dir / "mi" / "kldivnet_raw.ckpt"));
        CHECK(run(fx.train_args("bogus", fx.dir / "bogus", 2)) != 0);
    }
    SUBCASE("resume continues the iteration counter") {
        const fs::path res = fx.dir / "resumed";
        REQUIRE(run(fx.train_args("dv", res, 6) + " --resume " + q(dv / "train_state.ckpt")) == 0);
        std::ifstream in(res / "history.csv");
        std::string line, last;
        int rows = -1;
        while (std::getline(in, line)) {
            if (!line.empty()) last = line, ++rows;
        }
        CHECK(rows == 6);
        CHECK(last.rfind("5,", 0) == 0);
    }
    SUBCASE("register with a trained network") {
        const auto pairs = list_pairs(fx.data, "test");
        const fs::path out = fx.dir / "reg";
        REQUIRE(run("register --fixed " + q(pairs[0] / "fixed.mha") + " --moving " + q(pairs[0] / "moving.mha") + " --fixed-labels " +
                    q(pairs[0] / "fixed_labels.mha") + " --moving-labels " + q(pairs[0] / "moving_labels.mha") + " --checkpoint " +
                    q(dv / "regnet_ema.ckpt") + " --out " + q(out)) == 0);
        const DisplacementField f = load_field(out / "field.mha");
        CHECK(f.dims() == Shape{32, 32});
        CHECK(load_image(out / "moved.mha").dims() == Shape{32, 32});
        const json m = read_json(out / "metrics.json");
        CHECK(m["before"]["dice"].get<double>() > 0.0);
        CHECK(m["after"].contains("hd"));
    }
    SUBCASE("register fails without a checkpoint") {
        const auto pairs = list_pairs(fx.data, "test");
        CHECK(run("register --fixed " + q(pairs[0] / "fixed.mha") + " --moving " + q(pairs[0] / "moving.mha") + " --out " + q(fx.dir / "r")) != 0);
        CHECK(run("register --fixed " + q(pairs[0] / "fixed.mha") + " --moving " + q(pairs[0] / "moving.mha") + " --checkpoint " +
                  q(fx.dir / "missing.ckpt") + " --out " + q(fx.dir / "r")) != 0);
    }
    SUBCASE("iterative registration of a self pair stays near identity") {
        const auto pairs = list_pairs(fx.data, "test");
        const fs::path out = fx.dir / "iter";
        REQUIRE(run("register --method iterative --metric ssd --iterations 20 --fixed " + q(pairs[0] / "fixed.mha") + " --moving " +
                    q(pairs[0] / "fixed.mha") + " --out " + q(out)) == 0);
        CHECK(load_field(out / "field.mha").mean_abs() < 0.05);
    }
    SUBCASE("evaluate without a network reports the identity Dice") {
        const fs::path out = fx.dir / "eval";
        REQUIRE(run("evaluate --data " + q(fx.data) + " --split test --out " + q(out)) == 0);
        const json ev = read_json(out / "evaluation.json");
        const json ph = read_json(fx.data / "phantom.json");
        CHECK(ev["pairs"] == 2);
        CHECK(ev["after"]["dice"]["mean"].get<double>() == ev["before"]["dice"]["mean"].get<double>());
        CHECK(ev["before"]["dice"]["mean"].get<double>() == doctest::Approx(ph["splits"]["test"]["identity_mean_dice"].get<double>()));
        REQUIRE(run("evaluate --data " + q(fx.data) + " --checkpoint " + q(dv / "regnet_ema.ckpt") + " --out " + q(fx.dir / "eval2")) == 0);
        CHECK(read_json(fx.dir / "eval2" / "evaluation.json")["per_pair"].size() == 2);
    }
}

TEST_CASE("manifest reruns reproduce training in double precision") {
    Fixture fx;
    const fs::path a = fx.dir / "a", b = fx.dir / "b";
    REQUIRE(run(fx.train_args("dv", a, 3) + " --precision f64") == 0);
    REQUIRE(run("train --config " + q(a / "run_manifest.json") + " --out " + q(b)) == 0);
    for (const auto &f : {"history.csv", "regnet_ema.ckpt", "kldivnet_ema.ckpt", "train_state.ckpt"}) CHECK(slurp(a / f) == slurp(b / f));
    json ma = without_timestamps(read_json(a / "run_manifest.json")), mb = without_timestamps(read_json(b / "run_manifest.json"));
    ma["config"].erase("out");
    mb["config"].erase("out");
    ma.erase("outputs");
    mb.erase("outputs");
    CHECK(ma == mb);
}

TEST_CASE("landscape command") {
    Fixture fx;
    const auto pairs = list_pairs(fx.data, "test");
    const fs::path out = fx.dir / "land";
    REQUIRE(run("landscape --fixed " + q(pairs[0] / "fixed.mha") + " --moving " + q(pairs[0] / "fixed.mha") + " --fixed-labels " +
                q(pairs[0] / "fixed_labels.mha") + " --moving-labels " + q(pairs[0] / "fixed_labels.mha") +
                " --max-offset 4 --step 2 --metrics ssd,lncc,dice --out " + q(out)) == 0);
    const json j = read_json(out / "landscape.json");
    CHECK(j["rows"] == 5 * 5 * 3);
    for (const auto &m : {"ssd", "lncc", "dice"}) {
        CHECK(j["best_offset"][m]["dx"] == 0.0);
        CHECK(j["best_offset"][m]["dy"] == 0.0);
        CHECK(fs::exists(out / (std::string("landscape_") + m + ".dat")));
    }
    CHECK(run("landscape --fixed " + q(pairs[0] / "fixed.mha") + " --moving " + q(pairs[0] / "moving.mha") + " --max-offset 20 --out " +
              q(fx.dir / "bad")) != 0);
}

TEST_CASE("estimate-kl command") {
    test::TempDir dir("kl");
    Samples s{400, 2, {}};
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Index i = 0; i < s.count * s.dim; ++i) s.values.push_back(n(rng));
    save_samples_csv(dir / "s.csv", s);
    REQUIRE(run("estimate-kl --mu " + q(dir / "s.csv") + " --lam " + q(dir / "s.csv") + " --steps 200 --out " + q(dir / "out")) == 0);
    const json e = read_json(dir / "out" / "estimate.json");
    CHECK(e["mode"] == "kl");
    CHECK(std::abs(e["estimate"].get<double>()) <= 0.02);
    REQUIRE(run("estimate-kl --joint " + q(dir / "s.csv") + " --split 1 --steps 50 --out " + q(dir / "mi")) == 0);
    CHECK(read_json(dir / "mi" / "estimate.json")["mode"] == "mi");
    CHECK(run("estimate-kl --mu " + q(dir / "missing.csv") + " --lam " + q(dir / "s.csv") + " --out " + q(dir / "x")) != 0);
}
