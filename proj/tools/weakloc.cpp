#include <weakloc/baselines.hpp>
#include <weakloc/classifier.hpp>
#include <weakloc/config.hpp>
#include <weakloc/cropenv.hpp>
#include <weakloc/eval.hpp>
#include <weakloc/ppo.hpp>
#include <weakloc/runtime.hpp>
#include <weakloc/synthdata.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace weakloc;

namespace
{

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out = "run";
    std::string data;
};

struct RlFlags {
    int variant = 3;
    bool variant_given = false;
    std::size_t t_infer = 1024;
    std::string select = "final";
    std::string classifier;
};

ConfigFile load_config(const Common &c)
{
    if (c.config_path.empty()) {
        return {};
    }
    return ConfigFile::load(c.config_path);
}

fs::path data_dir(const Common &c)
{
    return c.data.empty() ? fs::path(c.out) / "data" : fs::path(c.data);
}

void require(const fs::path &p, const std::string &hint)
{
    if (!fs::exists(p)) {
        throw Error("missing " + p.string() + " (" + hint + ")");
    }
}

json read_json(const fs::path &p)
{
    std::ifstream is(p);
    if (!is) {
        throw Error("cannot read " + p.string());
    }
    return json::parse(is);
}

void write_json(const fs::path &p, const json &j)
{
    std::ofstream os(p, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + p.string());
    }
    os << j.dump(2) << '\n';
}

ppo::Selection parse_selection(const std::string &s)
{
    if (s == "final") {
        return ppo::Selection::final_step;
    }
    if (s == "best-reward") {
        return ppo::Selection::best_reward;
    }
    throw Error("--select must be 'final' or 'best-reward', got '" + s + "'");
}

std::shared_ptr<classifier::ClassifierNet> load_classifier(const fs::path &ckpt)
{
    require(ckpt, "run train-classifier first");
    std::size_t resolution = classifier::default_resolution;
    const auto meta = fs::path(ckpt).replace_extension(".json");
    if (fs::exists(meta)) {
        resolution = read_json(meta).value("resolution", resolution);
    }
    auto net = std::make_shared<classifier::ClassifierNet>(0, resolution);
    auto params = net->parameters();
    load_checkpoint(ckpt, params);
    return net;
}

std::string rl_name(int variant)
{
    return "rl_config" + std::to_string(variant);
}

env::EnvConfig env_from_json(const json &j)
{
    env::EnvConfig e;
    e.variant = env::parse_variant(j.at("variant").get<int>());
    e.episode_length = j.at("episode_length").get<std::size_t>();
    e.delta_max = j.at("delta_max").get<double>();
    e.s_min = j.at("s_min").get<double>();
    e.s_max = j.at("s_max").get<double>();
    e.resolution = j.at("resolution").get<std::size_t>();
    return e;
}

json env_to_json(const env::EnvConfig &e)
{
    return {{"variant", static_cast<int>(e.variant)}, {"episode_length", e.episode_length},
            {"delta_max", e.delta_max},               {"s_min", e.s_min},
            {"s_max", e.s_max},                       {"resolution", e.resolution}};
}

/// A trained model that can turn an image into a rectangle.
struct LoadedModel {
    std::string name;
    eval::Localizer localize;
};

LoadedModel load_rl(const fs::path &run, int variant, const RlFlags &flags)
{
    const auto base = run / rl_name(variant);
    require(fs::path(base).concat(".ckpt"), "run train-rl --variant " + std::to_string(variant) + " first");
    const auto meta = read_json(fs::path(base).concat(".json"));
    const auto env_config = env_from_json(meta.at("env"));
    auto scorer = std::make_shared<env::ClassifierScorer>(load_classifier(meta.at("classifier").get<std::string>()));
    auto environment = std::make_shared<env::CropEnv>(scorer, env_config);
    auto policy = std::make_shared<ppo::PolicyNet>(env_config.observation_channels(), env_config.resolution, 0);
    auto params = policy->parameters();
    load_checkpoint(fs::path(base).concat(".ckpt"), params);
    ppo::LocalizeOptions options;
    options.t_infer = flags.t_infer;
    options.select = parse_selection(flags.select);
    return {"RL - Configuration " + std::to_string(variant), [=](const Tensor &image) {
                return ppo::localize(image, *policy, *environment, options);
            }};
}

LoadedModel load_mil(const fs::path &run)
{
    require(run / "mil.ckpt", "run train-baseline --kind mil first");
    const auto meta = read_json(run / "mil.json");
    auto net = std::make_shared<baselines::MILNet>(0, meta.at("patch_side").get<std::size_t>());
    auto params = net->parameters();
    load_checkpoint(run / "mil.ckpt", params);
    const auto stride = meta.at("stride").get<std::size_t>();
    return {"MIL", [=](const Tensor &image) { return baselines::mil_localize(image, *net, stride); }};
}

LoadedModel load_supervised(const fs::path &run)
{
    require(run / "supervised.ckpt", "run train-baseline --kind supervised first");
    const auto meta = read_json(run / "supervised.json");
    auto net = std::make_shared<baselines::RegressorNet>(0, meta.at("resolution").get<std::size_t>());
    auto params = net->parameters();
    load_checkpoint(run / "supervised.ckpt", params);
    return {"Supervised", [=](const Tensor &image) { return net->predict(image); }};
}

LoadedModel load_model(const std::string &key, const fs::path &run, const RlFlags &flags, std::uint64_t seed)
{
    if (key == "rl1" || key == "rl2" || key == "rl3") {
        return load_rl(run, key.back() - '0', flags);
    }
    if (key == "mil") {
        return load_mil(run);
    }
    if (key == "supervised") {
        return load_supervised(run);
    }
    if (key == "random") {
        return {"Random rectangle", eval::random_rect_localizer(substream_seed(seed, 0x7a4d))};
    }
    throw Error("unknown model '" + key + "' (expected rl1, rl2, rl3, mil, supervised or random)");
}

std::vector<std::string> split_list(const std::string &s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<std::string> available_models(const fs::path &run)
{
    std::vector<std::string> out;
    for (int v : {3, 1, 2}) {
        if (fs::exists(run / (rl_name(v) + ".ckpt"))) {
            out.push_back("rl" + std::to_string(v));
        }
    }
    for (const char *m : {"mil", "supervised"}) {
        if (fs::exists(run / (std::string(m) + ".ckpt"))) {
            out.emplace_back(m);
        }
    }
    out.emplace_back("random");
    return out;
}

int cmd_gen_data(const Common &c)
{
    synth::SynthConfig config;
    apply(load_config(c), config);
    const auto dir = data_dir(c);
    synth::generate_dataset(config, c.seed, dir);
    std::cout << "wrote " << config.train_count << "/" << config.val_count << "/" << config.holdout_count
              << " samples to " << dir.string() << '\n';
    return 0;
}

int cmd_train_classifier(const Common &c)
{
    classifier::TrainConfig config;
    apply(load_config(c), config);
    config.seed = c.seed;
    const auto dir = data_dir(c);
    require(dir / "train", "run gen-data first");
    const auto splits = synth::load_splits(dir);
    const fs::path out(c.out);
    fs::create_directories(out);
    const auto result = classifier::train_classifier(splits.train, splits.val, config);
    save_checkpoint(out / "classifier.ckpt", result.net.parameters());
    classifier::write_curve_csv(out / "classifier_curve.csv", result.curve);
    const double acc = result.curve.back().val_accuracy;
    write_json(out / "classifier.json", {{"resolution", result.net.resolution()},
                                         {"seed", c.seed},
                                         {"epochs", config.epochs},
                                         {"learning_rate", config.learning_rate},
                                         {"val_accuracy", acc}});
    for (const auto &e : result.curve) {
        std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " val_accuracy " << e.val_accuracy << '\n';
    }
    return 0;
}

int cmd_train_rl(const Common &c, const RlFlags &flags)
{
    const auto file = load_config(c);
    env::EnvConfig env_config;
    apply(file, env_config);
    if (flags.variant_given) {
        env_config.variant = env::parse_variant(flags.variant);
    }
    ppo::PPOConfig config;
    apply(file, config);
    config.seed = c.seed;
    const fs::path out(c.out);
    const fs::path clf_path = flags.classifier.empty() ? out / "classifier.ckpt" : fs::path(flags.classifier);
    auto scorer = std::make_shared<env::ClassifierScorer>(load_classifier(clf_path));
    env_config.resolution = load_classifier(clf_path)->resolution();
    const auto dir = data_dir(c);
    require(dir / "train", "run gen-data first");
    const auto splits = synth::load_splits(dir);
    fs::create_directories(out);

    ppo::TrainOptions options;
    options.threads = ppo::threads_from_env();
    options.verbose = true;
    const auto name = rl_name(static_cast<int>(env_config.variant));
    const auto result = ppo::train_controller(splits.train, splits.val, scorer, env_config, config, options);
    save_checkpoint(out / (name + ".ckpt"), result.policy.parameters());
    save_checkpoint(out / (name + "_final.ckpt"), result.final_policy.parameters());
    ppo::write_curve_csv(out / (name + "_curve.csv"), result.curve);
    write_json(out / (name + ".json"), {{"env", env_to_json(env_config)},
                                        {"classifier", fs::absolute(clf_path).string()},
                                        {"seed", c.seed},
                                        {"total_updates", config.total_updates},
                                        {"rollout_steps", config.rollout_steps},
                                        {"best_validation_reward", result.best_validation_reward},
                                        {"diverged", result.diverged}});
    if (splits.train.audit().total() != 0) {
        throw Error("controller training read localization labels");
    }
    std::cout << "saved " << (out / (name + ".ckpt")).string() << " (best validation reward "
              << result.best_validation_reward << ")\n";
    return result.diverged ? 3 : 0;
}

int cmd_train_baseline(const Common &c, const std::string &kind)
{
    const auto file = load_config(c);
    const auto dir = data_dir(c);
    require(dir / "train", "run gen-data first");
    const auto splits = synth::load_splits(dir);
    const fs::path out(c.out);
    fs::create_directories(out);
    if (kind == "mil") {
        MilLayout layout;
        apply(file, layout);
        const std::size_t side = splits.train.image(0).dim(1);
        const auto p = layout.patch_side ? layout.patch_side : baselines::default_patch_side(side);
        const auto n = layout.patches_per_bag ? layout.patches_per_bag : baselines::default_patches_per_bag(side);
        const auto stride = layout.stride ? layout.stride : std::max<std::size_t>(1, p / 2);
        baselines::MilTrainConfig config;
        apply(file, config);
        config.seed = c.seed;
        const auto train_bags = baselines::build_bags(splits.train, p, n, substream_seed(c.seed, 11));
        const auto val_bags = baselines::build_bags(splits.val, p, n, substream_seed(c.seed, 12));
        const auto result = baselines::train_mil(train_bags, val_bags, config);
        save_checkpoint(out / "mil.ckpt", result.net.parameters());
        baselines::write_mil_curve_csv(out / "mil_curve.csv", result.curve);
        write_json(out / "mil.json", {{"patch_side", p}, {"patches_per_bag", n}, {"stride", stride}, {"seed", c.seed}});
        for (const auto &e : result.curve) {
            std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " val_score_gap " << e.val_score_gap
                      << '\n';
        }
        return 0;
    }
    if (kind == "supervised") {
        baselines::SupervisedConfig config;
        apply(file, config);
        config.seed = c.seed;
        const auto result = baselines::train_supervised(splits.train, splits.val, config);
        save_checkpoint(out / "supervised.ckpt", result.net.parameters());
        baselines::write_supervised_curve_csv(out / "supervised_curve.csv", result.curve);
        write_json(out / "supervised.json", {{"resolution", result.net.resolution()}, {"seed", c.seed}});
        for (const auto &e : result.curve) {
            std::cout << "epoch " << e.epoch << " train_mse " << e.train_mse << " val_mse " << e.val_mse << '\n';
        }
        return 0;
    }
    throw Error("--kind must be 'mil' or 'supervised', got '" + kind + "'");
}

int cmd_eval(const Common &c, const RlFlags &flags, const std::string &models, std::size_t overlays)
{
    const fs::path run(c.out);
    const auto dir = data_dir(c);
    require(dir / "holdout", "run gen-data first");
    const auto holdout = synth::Dataset::load(dir / "holdout");
    const auto keys = models.empty() ? available_models(run) : split_list(models);
    const auto eval_dir = run / "eval";
    fs::create_directories(eval_dir / "overlays");

    std::vector<eval::EvalReport> reports;
    for (const auto &key : keys) {
        const auto model = load_model(key, run, flags, c.seed);
        auto report = eval::evaluate_model(model.name, model.localize, holdout);
        eval::write_report_csv(eval_dir / (key + ".csv"), report);
        std::cerr << eval::summary_line(report) << '\n';
        std::size_t written = 0;
        for (std::size_t i = 0; i < holdout.size() && written < overlays; ++i) {
            if (holdout.label(i) != 1) {
                continue;
            }
            eval::render_overlay(holdout.image(i), *holdout.mask(i), report.records[written].pred,
                                 eval_dir / "overlays" / (key + "_" + holdout.id(i) + ".ppm"));
            ++written;
        }
        reports.push_back(std::move(report));
    }
    std::ostringstream table;
    eval::write_comparison_table(table, reports);
    std::ofstream(eval_dir / "report.txt", std::ios::trunc) << table.str();
    std::cout << table.str();
    return 0;
}

int cmd_infer(const Common &c, const RlFlags &flags, const std::string &model_key, const std::string &id,
              const std::string &overlay, const std::string &trace)
{
    const auto dir = data_dir(c);
    require(dir / "holdout", "run gen-data first");
    const auto splits = synth::load_splits(dir);
    for (const auto *split : {&splits.holdout, &splits.val, &splits.train}) {
        for (std::size_t i = 0; i < split->size(); ++i) {
            if (split->id(i) != id) {
                continue;
            }
            Rect rect;
            if (!trace.empty() && model_key.starts_with("rl")) {
                const fs::path run(c.out);
                const int variant = model_key.back() - '0';
                const auto base = run / rl_name(variant);
                const auto meta = read_json(fs::path(base).concat(".json"));
                const auto env_config = env_from_json(meta.at("env"));
                auto scorer =
                    std::make_shared<env::ClassifierScorer>(load_classifier(meta.at("classifier").get<std::string>()));
                const env::CropEnv environment(scorer, env_config);
                ppo::PolicyNet policy(env_config.observation_channels(), env_config.resolution, 0);
                auto params = policy.parameters();
                load_checkpoint(fs::path(base).concat(".ckpt"), params);
                std::ofstream ts(trace, std::ios::trunc);
                ppo::LocalizeOptions options;
                options.t_infer = flags.t_infer;
                options.select = parse_selection(flags.select);
                options.trace = &ts;
                rect = ppo::localize(split->image(i), policy, environment, options);
            } else {
                rect = load_model(model_key, c.out, flags, c.seed).localize(split->image(i));
            }
            json j{{"id", id}, {"model", model_key}, {"cx", rect.cx}, {"cy", rect.cy}, {"w", rect.w}, {"h", rect.h}};
            if (split->label(i) == 1) {
                j["dice"] = eval::dice(rect, *split->mask(i));
            }
            if (!overlay.empty()) {
                const auto mask = split->label(i) == 1 ? *split->mask(i)
                                                       : Mask(split->image(i).dim(1), split->image(i).dim(2));
                eval::render_overlay(split->image(i), mask, rect, overlay);
            }
            std::cout << j.dump() << '\n';
            return 0;
        }
    }
    throw Error("no sample with id '" + id + "' in " + dir.string());
}

void add_common(CLI::App *app, Common &c)
{
    app->add_option("--config", c.config_path, "key=value settings file with [sections]")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "random seed")->capture_default_str();
    app->add_option("--out", c.out, "run directory for outputs")->capture_default_str();
    app->add_option("--data", c.data, "dataset directory (default <out>/data)");
}

void add_inference(CLI::App *app, RlFlags &flags)
{
    app->add_option("--t-infer", flags.t_infer, "controller steps at inference")->capture_default_str();
    app->add_option("--select", flags.select, "final | best-reward")->capture_default_str();
}

} // namespace

int main(int argc, char **argv)
{
    tune_allocator();
    CLI::App app{"Weakly-supervised lesion localization with a PPO crop controller"};
    app.require_subcommand(1);
    Common common;
    RlFlags rl;
    std::string kind;
    std::string models;
    std::size_t overlays = 5;
    std::string model_key = "rl3";
    std::string id;
    std::string overlay;
    std::string trace;

    auto *gen = app.add_subcommand("gen-data", "render the synthetic train/val/holdout splits");
    add_common(gen, common);

    auto *clf = app.add_subcommand("train-classifier", "train the presence classifier");
    add_common(clf, common);

    auto *trl = app.add_subcommand("train-rl", "train the crop controller with PPO");
    add_common(trl, common);
    trl->add_option("--variant", rl.variant, "state/action configuration 1, 2 or 3")
        ->check(CLI::Range(1, 3))
        ->capture_default_str();
    trl->add_option("--classifier", rl.classifier, "classifier checkpoint (default <out>/classifier.ckpt)");

    auto *tb = app.add_subcommand("train-baseline", "train the MIL or supervised baseline");
    add_common(tb, common);
    tb->add_option("--kind", kind, "mil | supervised")->required();

    auto *ev = app.add_subcommand("eval", "score models on the holdout split");
    add_common(ev, common);
    add_inference(ev, rl);
    ev->add_option("--models", models, "comma list of rl1,rl2,rl3,mil,supervised,random (default: all trained)");
    ev->add_option("--overlays", overlays, "overlay PPM files per model")->capture_default_str();

    auto *inf = app.add_subcommand("infer", "localize one sample");
    add_common(inf, common);
    add_inference(inf, rl);
    inf->add_option("--model", model_key, "rl1 | rl2 | rl3 | mil | supervised | random")->capture_default_str();
    inf->add_option("--id", id, "sample id, e.g. holdout-000003")->required();
    inf->add_option("--overlay", overlay, "write a PPM overlay here");
    inf->add_option("--trace", trace, "write the per-step controller trace here (RL models)");

    CLI11_PARSE(app, argc, argv);
    rl.variant_given = trl->count("--variant") > 0;
    try {
        if (*gen) {
            return cmd_gen_data(common);
        }
        if (*clf) {
            return cmd_train_classifier(common);
        }
        if (*trl) {
            return cmd_train_rl(common, rl);
        }
        if (*tb) {
            return cmd_train_baseline(common, kind);
        }
        if (*ev) {
            return cmd_eval(common, rl, models, overlays);
        }
        if (*inf) {
            return cmd_infer(common, rl, model_key, id, overlay, trace);
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
