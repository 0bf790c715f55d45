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

#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "divreg/dataset.hpp"
#include "divreg/kldivnet.hpp"
#include "divreg/landscape.hpp"
#include "divreg/metaimage.hpp"
#include "divreg/metrics.hpp"
#include "divreg/phantom.hpp"
#include "divreg/register.hpp"
#include "divreg/seed.hpp"
#include "divreg/train.hpp"
#include "divreg/transform.hpp"

namespace divreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

void write_json(const fs::path &path, const json &j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Non-finite numbers become null so that outputs stay valid JSON.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

/// Effective configuration of one command: defaults, then the --config file
/// (a plain object or a previous run manifest), then explicit flags.
class CommandConfig {
public:
    CommandConfig(CLI::App *app, std::string name, json defaults) : app_(app), name_(std::move(name)), defaults_(std::move(defaults)) {
        app_->add_option("--config", config_path_, "JSON config file or a previous run_manifest.json");
        add<std::uint64_t>("--seed", "seed", "Random seed");
        add<std::string>("--out", "out", "Output directory");
        add<std::string>("--precision", "precision", "Floating point precision")->check(CLI::IsMember({"f32", "f64"}));
    }

    template <typename V>
    CLI::Option *add(const std::string &flag, const std::string &key, const std::string &help) {
        auto holder = std::make_shared<V>();
        CLI::Option *opt = app_->add_option(flag, *holder, help);
        setters_.push_back([holder, opt, key](json &j) {
            if (opt->count()) j[json::json_pointer("/" + key)] = *holder;
        });
        return opt;
    }

    CLI::Option *flag(const std::string &flag, const std::string &key, const std::string &help) {
        auto holder = std::make_shared<bool>(false);
        CLI::Option *opt = app_->add_flag(flag, *holder, help);
        setters_.push_back([holder, opt, key](json &j) {
            if (opt->count()) j[json::json_pointer("/" + key)] = *holder;
        });
        return opt;
    }

    json resolve() const {
        json j = defaults_;
        if (!config_path_.empty()) {
            json file = read_json(config_path_);
            if (file.contains("command") && file.contains("config")) {
                if (file.at("command") != name_) throw std::invalid_argument("manifest belongs to command " + file.at("command").dump());
                file = file.at("config");
            }
            for (const auto &[key, value] : file.items()) {
                if (!j.contains(key)) throw std::invalid_argument(name_ + ": unknown config key '" + key + "'");
            }
            j.update(file);
        }
        for (const auto &set : setters_) set(j);
        return j;
    }

private:
    CLI::App *app_;
    std::string name_;
    json defaults_;
    std::string config_path_;
    std::vector<std::function<void(json &)>> setters_;
};

json common_defaults() { return {{"seed", 0}, {"out", "out"}, {"precision", "f32"}}; }

/// Writes run_manifest.json next to the outputs.
class Manifest {
public:
    Manifest(std::string command, json config) : command_(std::move(command)), config_(std::move(config)), start_(utc_now()) {}

    void output(const fs::path &p) { outputs_.push_back(p.string()); }

    void write(const fs::path &dir) {
        output(dir / "run_manifest.json");
        const json j{{"command", command_},
                     {"config", config_},
                     {"seed", config_.value("seed", std::uint64_t{0})},
                     {"version", DIVREG_VERSION},
                     {"timestamps", {{"start", start_}, {"end", utc_now()}}},
                     {"outputs", outputs_}};
        write_json(dir / "run_manifest.json", j);
    }

private:
    std::string command_;
    json config_;
    std::string start_;
    std::vector<std::string> outputs_;
};

fs::path prepare_out(const json &cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    fs::create_directories(out);
    return out;
}

template <typename F>
auto with_precision(const json &cfg, F &&f) {
    if (cfg.at("precision") == "f64") return f(double{});
    return f(float{});
}

// ---------------------------------------------------------------- gen-phantom

void cmd_gen_phantom(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("gen-phantom", cfg);
    PhantomConfig pc;
    pc.base_pattern = parse_base_pattern(cfg.at("pattern"));
    pc.modality_map = parse_modality_map(cfg.at("modality"));
    pc.dims = cfg.at("dims").get<Shape>();
    pc.spacing = cfg.at("spacing").is_null() ? Spacing(pc.dims.size(), 1.0) : cfg.at("spacing").get<Spacing>();
    pc.ffd_spacing_mm = cfg.at("ffd_spacing_mm");
    pc.ffd_sigma_mm = cfg.at("ffd_sigma_mm");
    pc.noise_sigma = cfg.at("noise_sigma");
    const std::uint64_t seed = cfg.at("seed");
    pc.pattern_seed = cfg.at("pattern_seed").is_null() ? seed : cfg.at("pattern_seed").get<std::uint64_t>();
    const auto ratios = cfg.at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) throw std::invalid_argument("gen-phantom: --ratios needs three values");
    const Index n = cfg.at("count");
    const SplitCounts counts = split_counts(n, ratios[0], ratios[1], ratios[2]);

    json summary{{"config", cfg}, {"splits", json::object()}};
    summary["config"].erase("out");
    Index index = 0;
    for (const auto &[split, count] : {std::pair{"train", counts.train}, std::pair{"val", counts.val}, std::pair{"test", counts.test}}) {
        double dice_sum = 0.0;
        for (Index k = 0; k < count; ++k, ++index) {
            pc.seed = derive_seed(seed, static_cast<std::uint64_t>(index), 20);
            const PhantomPair pair = gen_phantom_pair(pc);
            std::ostringstream id;
            id << "pair_" << std::setw(4) << std::setfill('0') << index;
            write_pair(out / split / id.str(), {id.str(), pair.fixed, pair.moving, pair.fixed_labels, pair.moving_labels, pair.truth});
            dice_sum += mean_dice(pair.fixed_labels, pair.moving_labels);
        }
        summary["splits"][split] = {{"count", count}, {"identity_mean_dice", count ? num(dice_sum / static_cast<double>(count)) : json(nullptr)}};
        manifest.output(out / split);
    }
    write_json(out / "phantom.json", summary);
    manifest.output(out / "phantom.json");
    manifest.write(out);
    std::cout << "wrote " << n << " pairs to " << out.string() << " (" << counts.train << "/" << counts.val << "/" << counts.test << ")\n";
}

// ---------------------------------------------------------------------- train

json train_defaults() {
    json j = TrainConfig{}.to_json();
    j.update(common_defaults());
    j["data"] = "";
    j["resume"] = "";
    return j;
}

TrainConfig train_config_from(const json &cfg) {
    json t = cfg;
    for (const char *k : {"seed", "out", "precision", "data", "resume"}) t.erase(k);
    TrainConfig c = TrainConfig::from_json(t);
    c.seed = cfg.at("seed");
    return c;
}

template <typename T>
void run_train(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("train", cfg);
    TrainConfig tc = train_config_from(cfg);
    if (cfg.at("data").get<std::string>().empty()) throw std::invalid_argument("train: --data is required");
    const std::vector<PairRecord> pairs = load_split(cfg.at("data").get<std::string>(), "train");
    if (pairs.empty()) throw std::runtime_error("train: the training split is empty");
    tc.regnet.rank = pairs.front().fixed.rank();
    tc.kldivnet.rank = tc.regnet.rank;

    TrainState<T> state;
    const std::string resume = cfg.at("resume");
    if (!resume.empty()) {
        state = load_train_state<T>(resume);
        const fs::path hist = fs::path(resume).parent_path() / "history.csv";
        if (fs::exists(hist)) {
            for (const auto &r : read_train_history(hist)) {
                if (r.iteration < state.iteration) state.history.push_back(r);
            }
        }
        if (static_cast<Index>(state.history.size()) != state.iteration) throw std::runtime_error("train: history next to the resume checkpoint is incomplete");
    } else {
        state = init_train_state<T>(tc);
    }
    const fs::path state_path = out / "train_state.ckpt";
    auto save_all = [&](const TrainState<T> &s) {
        save_train_state(state_path, s, tc);
        write_train_history(out / "history.csv", s.history);
    };
    try {
        train_divregnet<T>(pairs, tc, state, save_all);
    } catch (const NonFiniteError &) {
        save_train_state(out / "last_good.ckpt", state, tc);
        write_train_history(out / "history.csv", state.history);
        throw;
    }
    save_all(state);
    save_regnet(out / "regnet_raw.ckpt", state.regnet, tc.regnet);
    save_regnet(out / "regnet_ema.ckpt", state.regnet_ema, tc.regnet);
    manifest.output(out / "regnet_raw.ckpt");
    manifest.output(out / "regnet_ema.ckpt");
    if (tc.loss == Metric::dv) {
        save_kldivnet(out / "kldivnet_raw.ckpt", state.critic, tc.kldivnet);
        save_kldivnet(out / "kldivnet_ema.ckpt", state.critic_ema, tc.kldivnet);
        manifest.output(out / "kldivnet_raw.ckpt");
        manifest.output(out / "kldivnet_ema.ckpt");
    }
    manifest.output(state_path);
    manifest.output(out / "history.csv");
    manifest.write(out);
    std::cout << "trained " << state.iteration << " iterations; outputs in " << out.string() << '\n';
}

// ------------------------------------------------------------------- register

template <typename T>
void run_register(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("register", cfg);
    const Image fixed = load_image(cfg.at("fixed").get<std::string>());
    const Image moving = load_image(cfg.at("moving").get<std::string>());
    if (!fixed.same_grid(moving)) throw ShapeError("register: fixed and moving grids differ");
    DisplacementField field;
    const std::string method = cfg.at("method");
    if (method == "network") {
        const fs::path ck = cfg.at("checkpoint").get<std::string>();
        if (ck.empty() || !fs::exists(ck)) throw std::runtime_error("register: checkpoint not found: " + ck.string());
        RegNetConfig rc;
        const ParamSet<T> params = load_regnet<T>(ck, rc);
        if (rc.rank != fixed.rank()) throw ShapeError("register: checkpoint rank does not match the images");
        field = predict_field(params, rc, moving, fixed);
    } else {
        RegisterConfig rc;
        rc.metric = parse_metric(cfg.at("metric"));
        rc.model = parse_transform_model(cfg.at("model"));
        rc.iterations = cfg.at("iterations");
        rc.lr = cfg.at("lr");
        rc.smooth_weight = cfg.at("smooth_weight");
        rc.seed = cfg.at("seed");
        field = iterative_register(fixed, moving, rc).field;
    }
    save_image(warp_image(moving, field), out / "moved.mha");
    save_field(field, out / "field.mha");
    manifest.output(out / "moved.mha");
    manifest.output(out / "field.mha");
    const std::string fl = cfg.at("fixed_labels"), ml = cfg.at("moving_labels");
    if (!fl.empty() && !ml.empty()) {
        const LabelMap flab = load_labels(fl), mlab = load_labels(ml);
        const LabelMap moved_lab = warp_label(mlab, field);
        const LabelScores before = score_labels(flab, mlab), after = score_labels(flab, moved_lab);
        const json metrics{{"before", {{"dice", num(before.dice)}, {"asd", num(before.asd)}, {"hd", num(before.hd)}}},
                           {"after", {{"dice", num(after.dice)}, {"asd", num(after.asd)}, {"hd", num(after.hd)}}}};
        write_json(out / "metrics.json", metrics);
        save_labels(moved_lab, out / "moved_labels.mha");
        manifest.output(out / "metrics.json");
        manifest.output(out / "moved_labels.mha");
        std::cout << "dice " << before.dice << " -> " << after.dice << '\n';
    }
    manifest.write(out);
}

// ------------------------------------------------------------------- evaluate

struct Stats {
    std::vector<double> values;
    json to_json() const {
        std::vector<double> v;
        for (double x : values) {
            if (std::isfinite(x)) v.push_back(x);
        }
        if (v.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
        double m = 0.0, s = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        return {{"mean", m}, {"std", std::sqrt(s / static_cast<double>(v.size()))}, {"n", v.size()}};
    }
};

template <typename T>
void run_evaluate(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("evaluate", cfg);
    const std::vector<PairRecord> pairs = load_split(cfg.at("data").get<std::string>(), cfg.at("split").get<std::string>());
    const std::string ck = cfg.at("checkpoint");
    ParamSet<T> params;
    RegNetConfig rc;
    if (!ck.empty()) params = load_regnet<T>(ck, rc);
    const double pct = cfg.at("hd_percentile");
    Stats dice_b, asd_b, hd_b, dice_a, asd_a, hd_a;
    json per_pair = json::array();
    for (const auto &p : pairs) {
        if (!p.fixed_labels || !p.moving_labels) throw std::runtime_error("evaluate: pair " + p.id + " has no labels");
        LabelMap moved = *p.moving_labels;
        if (!ck.empty()) moved = warp_label(moved, predict_field(params, rc, p.moving, p.fixed));
        const LabelScores b = score_labels(*p.fixed_labels, *p.moving_labels, pct);
        const LabelScores a = score_labels(*p.fixed_labels, moved, pct);
        dice_b.values.push_back(b.dice);
        asd_b.values.push_back(b.asd);
        hd_b.values.push_back(b.hd);
        dice_a.values.push_back(a.dice);
        asd_a.values.push_back(a.asd);
        hd_a.values.push_back(a.hd);
        per_pair.push_back({{"id", p.id},
                            {"before", {{"dice", num(b.dice)}, {"asd", num(b.asd)}, {"hd", num(b.hd)}}},
                            {"after", {{"dice", num(a.dice)}, {"asd", num(a.asd)}, {"hd", num(a.hd)}}}});
    }
    const json result{{"split", cfg.at("split")},
                      {"pairs", pairs.size()},
                      {"before", {{"dice", dice_b.to_json()}, {"asd", asd_b.to_json()}, {"hd", hd_b.to_json()}}},
                      {"after", {{"dice", dice_a.to_json()}, {"asd", asd_a.to_json()}, {"hd", hd_a.to_json()}}},
                      {"per_pair", per_pair}};
    write_json(out / "evaluation.json", result);
    manifest.output(out / "evaluation.json");
    manifest.write(out);
    std::cout << "mean dice " << result["before"]["dice"]["mean"] << " -> " << result["after"]["dice"]["mean"] << '\n';
}

// ------------------------------------------------------------------ landscape

void cmd_landscape(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("landscape", cfg);
    const Image fixed = load_image(cfg.at("fixed").get<std::string>());
    Image moving = load_image(cfg.at("moving").get<std::string>());
    std::optional<LabelMap> fl, ml;
    if (!cfg.at("fixed_labels").get<std::string>().empty()) fl = load_labels(cfg.at("fixed_labels").get<std::string>());
    if (!cfg.at("moving_labels").get<std::string>().empty()) ml = load_labels(cfg.at("moving_labels").get<std::string>());
    LandscapeConfig lc;
    lc.max_offset = cfg.at("max_offset");
    lc.step = cfg.at("step");
    lc.metrics = cfg.at("metrics").get<std::vector<std::string>>();
    lc.lncc_window = cfg.at("lncc_window");
    lc.mi_bins = cfg.at("mi_bins");
    lc.dv.warmup_steps = cfg.at("dv_warmup_steps");
    lc.dv.steps_per_offset = cfg.at("dv_steps_per_offset");
    lc.dv.eval_shuffles = cfg.at("dv_eval_shuffles");
    lc.dv.seed = cfg.at("seed");
    const LandscapeTable table = landscape(fixed, moving, lc, fl ? &*fl : nullptr, ml ? &*ml : nullptr);
    table.write_csv(out / "landscape.csv");
    manifest.output(out / "landscape.csv");
    json best = json::object();
    for (const auto &m : lc.metrics) {
        const fs::path mat = out / ("landscape_" + m + ".dat");
        table.write_matrix(mat, m);
        manifest.output(mat);
        const auto [dx, dy] = table.best_offset(m);
        best[m] = {{"dx", dx}, {"dy", dy}};
    }
    write_json(out / "landscape.json", {{"best_offset", best}, {"meta", table.meta}, {"rows", table.rows.size()}});
    manifest.output(out / "landscape.json");
    manifest.write(out);
    std::cout << "best offsets: " << best.dump() << '\n';
}

// ---------------------------------------------------------------- estimate-kl

template <typename T>
void run_estimate_kl(const json &cfg) {
    const fs::path out = prepare_out(cfg);
    Manifest manifest("estimate-kl", cfg);
    EstimatorConfig ec;
    ec.channels = cfg.at("channels").get<std::vector<Index>>();
    ec.lr = cfg.at("lr");
    ec.steps = cfg.at("steps");
    ec.batch = cfg.at("batch");
    ec.seed = cfg.at("seed");
    ec.ema_decay = cfg.at("ema_decay");
    ec.denominator_ema = cfg.at("denominator_ema");
    Samples mu, lam;
    const std::string joint = cfg.at("joint");
    if (!joint.empty()) {
        mu = load_samples_csv(joint);
        lam = product_of_marginals(mu, cfg.at("split"), derive_seed(ec.seed, 0, 30));
    } else {
        mu = load_samples_csv(cfg.at("mu").get<std::string>());
        lam = load_samples_csv(cfg.at("lam").get<std::string>());
    }
    const KlEstimate est = estimate_kl<T>(mu, lam, ec);
    write_json(out / "estimate.json", {{"estimate", num(est.estimate)}, {"mode", joint.empty() ? "kl" : "mi"}, {"history", est.history}});
    manifest.output(out / "estimate.json");
    manifest.write(out);
    std::cout << std::setprecision(6) << "estimate " << est.estimate << '\n';
}

} // namespace

void register_commands(CLI::App &app) {
    // gen-phantom
    {
        CLI::App *sub = app.add_subcommand("gen-phantom", "Generate a synthetic phantom dataset");
        json d = common_defaults();
        d.update({{"count", 250},
                       {"ratios", {150, 50, 50}},
                       {"pattern", "shapes"},
                       {"modality", "identity"},
                       {"dims", {64, 64}},
                       {"spacing", nullptr},
                       {"ffd_spacing_mm", 20.0},
                       {"ffd_sigma_mm", 6.0},
                       {"noise_sigma", 0.02},
                       {"pattern_seed", nullptr}});
        auto cc = std::make_shared<CommandConfig>(sub, "gen-phantom", d);
        cc->add<Index>("--count", "count", "Number of pairs");
        cc->add<std::vector<double>>("--ratios", "ratios", "train/val/test ratios")->delimiter(',')->expected(3);
        cc->add<std::string>("--pattern", "pattern", "Base pattern")->check(CLI::IsMember({"shapes", "gradient-rings"}));
        cc->add<std::string>("--modality", "modality", "Intensity remap of the moving image")->check(CLI::IsMember({"identity", "invert", "nonmono"}));
        cc->add<std::vector<Index>>("--dims", "dims", "Image dims, slowest axis first")->delimiter(',');
        cc->add<std::vector<double>>("--spacing", "spacing", "Voxel spacing (mm)")->delimiter(',');
        cc->add<double>("--ffd-spacing", "ffd_spacing_mm", "FFD control spacing (mm)");
        cc->add<double>("--ffd-sigma", "ffd_sigma_mm", "Std of control displacements (mm)");
        cc->add<double>("--noise", "noise_sigma", "Additive noise std");
        cc->add<std::uint64_t>("--pattern-seed", "pattern_seed", "Seed of the shared template (defaults to --seed)");
        sub->callback([cc] { cmd_gen_phantom(cc->resolve()); });
    }
    // train
    {
        CLI::App *sub = app.add_subcommand("train", "Train the registration network");
        auto cc = std::make_shared<CommandConfig>(sub, "train", train_defaults());
        cc->add<std::string>("--data", "data", "Dataset root with a train split");
        cc->add<std::string>("--loss", "loss", "Similarity loss")->check(CLI::IsMember({"dv", "lncc", "mi", "ssd"}));
        cc->add<Index>("--iterations", "iterations", "Training iterations");
        cc->add<Index>("--batch", "batch", "Pairs per iteration");
        cc->add<double>("--lr", "lr", "Adam learning rate");
        cc->add<double>("--smooth-weight", "smooth_weight", "Weight of the smoothness penalty");
        cc->add<int>("--mi-bins", "mi_bins", "Bins of the Parzen MI");
        cc->add<Index>("--lncc-window", "lncc_window", "LNCC window");
        cc->add<double>("--ema-decay", "ema_decay", "Parameter EMA decay");
        cc->add<Index>("--checkpoint-every", "checkpoint_every", "Checkpoint interval (0 = end only)");
        cc->add<std::string>("--resume", "resume", "train_state.ckpt to continue from");
        cc->flag("--augment", "augment", "Random rigid augmentation");
        cc->flag("--alternating", "alternating", "Alternate critic and registration updates");
        cc->flag("--denominator-ema", "denominator_ema", "Moving-average denominator in the critic's marginal gradient");
        sub->callback([cc] {
            const json cfg = cc->resolve();
            with_precision(cfg, [&](auto t) { run_train<decltype(t)>(cfg); });
        });
    }
    // register
    {
        CLI::App *sub = app.add_subcommand("register", "Register one pair");
        json d = common_defaults();
        d.update({{"fixed", ""},
                       {"moving", ""},
                       {"fixed_labels", ""},
                       {"moving_labels", ""},
                       {"checkpoint", ""},
                       {"method", "network"},
                       {"metric", "ssd"},
                       {"model", "dvf"},
                       {"iterations", 200},
                       {"lr", 0.05},
                       {"smooth_weight", 0.0}});
        auto cc = std::make_shared<CommandConfig>(sub, "register", d);
        cc->add<std::string>("--fixed", "fixed", "Fixed image (.mha)");
        cc->add<std::string>("--moving", "moving", "Moving image (.mha)");
        cc->add<std::string>("--fixed-labels", "fixed_labels", "Fixed label map");
        cc->add<std::string>("--moving-labels", "moving_labels", "Moving label map");
        cc->add<std::string>("--checkpoint", "checkpoint", "Registration network checkpoint");
        cc->add<std::string>("--method", "method", "network or iterative")->check(CLI::IsMember({"network", "iterative"}));
        cc->add<std::string>("--metric", "metric", "Iterative similarity")->check(CLI::IsMember({"ssd", "lncc", "mi", "dv"}));
        cc->add<std::string>("--model", "model", "Iterative transform model")->check(CLI::IsMember({"dvf", "ffd"}));
        cc->add<Index>("--iterations", "iterations", "Iterative steps");
        cc->add<double>("--lr", "lr", "Iterative step size");
        cc->add<double>("--smooth-weight", "smooth_weight", "Smoothness weight");
        sub->callback([cc] {
            const json cfg = cc->resolve();
            with_precision(cfg, [&](auto t) { run_register<decltype(t)>(cfg); });
        });
    }
    // evaluate
    {
        CLI::App *sub = app.add_subcommand("evaluate", "Label overlap and surface distances over a split");
        json d = common_defaults();
        d.update({{"data", ""}, {"split", "test"}, {"checkpoint", ""}, {"hd_percentile", 100.0}});
        auto cc = std::make_shared<CommandConfig>(sub, "evaluate", d);
        cc->add<std::string>("--data", "data", "Dataset root");
        cc->add<std::string>("--split", "split", "Split to evaluate");
        cc->add<std::string>("--checkpoint", "checkpoint", "Registration network (identity if omitted)");
        cc->add<double>("--hd-percentile", "hd_percentile", "Hausdorff percentile");
        sub->callback([cc] {
            const json cfg = cc->resolve();
            with_precision(cfg, [&](auto t) { run_evaluate<decltype(t)>(cfg); });
        });
    }
    // landscape
    {
        CLI::App *sub = app.add_subcommand("landscape", "Similarity values over a grid of translations");
        json d = common_defaults();
        const LandscapeConfig lc;
        d.update({{"fixed", ""},
                       {"moving", ""},
                       {"fixed_labels", ""},
                       {"moving_labels", ""},
                       {"max_offset", lc.max_offset},
                       {"step", lc.step},
                       {"metrics", lc.metrics},
                       {"lncc_window", lc.lncc_window},
                       {"mi_bins", lc.mi_bins},
                       {"dv_warmup_steps", lc.dv.warmup_steps},
                       {"dv_steps_per_offset", lc.dv.steps_per_offset},
                       {"dv_eval_shuffles", lc.dv.eval_shuffles}});
        auto cc = std::make_shared<CommandConfig>(sub, "landscape", d);
        cc->add<std::string>("--fixed", "fixed", "Fixed image");
        cc->add<std::string>("--moving", "moving", "Moving image");
        cc->add<std::string>("--fixed-labels", "fixed_labels", "Fixed labels (enables dice)");
        cc->add<std::string>("--moving-labels", "moving_labels", "Moving labels");
        cc->add<Index>("--max-offset", "max_offset", "Largest shift (pixels)");
        cc->add<Index>("--step", "step", "Grid step (pixels)");
        cc->add<std::vector<std::string>>("--metrics", "metrics", "Metrics to evaluate")->delimiter(',');
        cc->add<Index>("--lncc-window", "lncc_window", "LNCC window");
        cc->add<int>("--mi-bins", "mi_bins", "Bins of the Parzen MI");
        cc->add<Index>("--dv-warmup-steps", "dv_warmup_steps", "Critic warm-up steps");
        cc->add<Index>("--dv-steps-per-offset", "dv_steps_per_offset", "Critic fine-tuning steps per offset");
        cc->add<Index>("--dv-eval-shuffles", "dv_eval_shuffles", "Shuffles averaged per reported value");
        sub->callback([cc] { cmd_landscape(cc->resolve()); });
    }
    // estimate-kl
    {
        CLI::App *sub = app.add_subcommand("estimate-kl", "Neural KL / MI estimate from sample files");
        json d = common_defaults();
        const EstimatorConfig ec;
        d.update({{"mu", ""},
                       {"lam", ""},
                       {"joint", ""},
                       {"split", 1},
                       {"channels", ec.channels},
                       {"lr", ec.lr},
                       {"steps", ec.steps},
                       {"batch", ec.batch},
                       {"ema_decay", ec.ema_decay},
                       {"denominator_ema", ec.denominator_ema}});
        auto cc = std::make_shared<CommandConfig>(sub, "estimate-kl", d);
        cc->add<std::string>("--mu", "mu", "CSV samples of the first distribution");
        cc->add<std::string>("--lam", "lam", "CSV samples of the reference distribution");
        cc->add<std::string>("--joint", "joint", "CSV joint samples (estimates MI instead)");
        cc->add<Index>("--split", "split", "Columns of the first variable in --joint");
        cc->add<std::vector<Index>>("--channels", "channels", "Layer widths ending in 1")->delimiter(',');
        cc->add<double>("--lr", "lr", "Adam learning rate");
        cc->add<Index>("--steps", "steps", "Optimisation steps");
        cc->add<Index>("--batch", "batch", "Minibatch size");
        cc->add<double>("--ema-decay", "ema_decay", "Parameter EMA decay");
        cc->flag("--denominator-ema", "denominator_ema", "Moving-average denominator in the marginal gradient");
        sub->callback([cc] {
            const json cfg = cc->resolve();
            with_precision(cfg, [&](auto t) { run_estimate_kl<decltype(t)>(cfg); });
        });
    }
}

} // namespace divreg::cli
