#include <weakloc/config.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace weakloc
{

namespace
{

const std::map<std::string, std::set<std::string>> &schema()
{
    static const std::map<std::string, std::set<std::string>> s{
        {"data",
         {"image_side", "lesion_probability", "lesion_radius_min", "lesion_radius_max", "gland_radius_min",
          "gland_radius_max", "noise_std", "train_count", "val_count", "holdout_count"}},
        {"classifier", {"batch_size", "epochs", "learning_rate"}},
        {"env", {"variant", "episode_length", "delta_max", "s_min", "s_max", "resolution"}},
        {"ppo",
         {"learning_rate", "minibatch_size", "entropy_coef", "clip_epsilon", "gamma", "gae_lambda", "value_coef",
          "epochs_per_update", "rollout_steps", "total_updates", "max_grad_norm", "eval_interval", "eval_images"}},
        {"mil", {"epochs", "batch_size", "learning_rate", "patch_side", "patches_per_bag", "stride"}},
        {"supervised", {"epochs", "batch_size", "learning_rate"}},
    };
    return s;
}

std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string &section, const std::string &key, const std::string &v)
{
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != v.size() || v.empty()) {
        throw Error("[" + section + "] " + key + ": expected a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_unsigned(const std::string &section, const std::string &key, const std::string &v)
{
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
        throw Error("[" + section + "] " + key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

template <typename T>
void set_num(const ConfigFile &f, const std::string &section, const std::string &key, T &target)
{
    if (const auto v = f.get(section, key)) {
        if constexpr (std::is_floating_point_v<T>) {
            target = to_double(section, key, *v);
        } else {
            target = static_cast<T>(to_unsigned(section, key, *v));
        }
    }
}

} // namespace

ConfigFile ConfigFile::parse(std::istream &is, const std::string &origin)
{
    ConfigFile f;
    f.origin_ = origin;
    std::string section;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        line = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw Error(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            f.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        f.sections_[section][key] = trim(line.substr(eq + 1));
    }
    return f;
}

ConfigFile ConfigFile::load(const std::filesystem::path &path)
{
    std::ifstream is(path);
    if (!is) {
        throw Error("cannot read config file " + path.string());
    }
    auto f = parse(is, path.string());
    f.check_known_keys();
    return f;
}

std::optional<std::string> ConfigFile::get(const std::string &section, const std::string &key) const
{
    const auto s = sections_.find(section);
    if (s == sections_.end()) {
        return std::nullopt;
    }
    const auto k = s->second.find(key);
    if (k == s->second.end()) {
        return std::nullopt;
    }
    return k->second;
}

bool ConfigFile::has_section(const std::string &section) const
{
    return sections_.contains(section);
}

void ConfigFile::check_known_keys() const
{
    for (const auto &[section, keys] : sections_) {
        const auto known = schema().find(section);
        if (known == schema().end()) {
            throw Error(origin_ + ": unknown section [" + section + "]");
        }
        for (const auto &[key, value] : keys) {
            if (!known->second.contains(key)) {
                throw Error(origin_ + ": unknown key '" + key + "' in [" + section + "]");
            }
        }
    }
}

void apply(const ConfigFile &f, synth::SynthConfig &c)
{
    set_num(f, "data", "image_side", c.image_side);
    set_num(f, "data", "lesion_probability", c.lesion_probability);
    set_num(f, "data", "lesion_radius_min", c.lesion_radius_range[0]);
    set_num(f, "data", "lesion_radius_max", c.lesion_radius_range[1]);
    set_num(f, "data", "gland_radius_min", c.gland_radius_range[0]);
    set_num(f, "data", "gland_radius_max", c.gland_radius_range[1]);
    set_num(f, "data", "noise_std", c.noise_std);
    set_num(f, "data", "train_count", c.train_count);
    set_num(f, "data", "val_count", c.val_count);
    set_num(f, "data", "holdout_count", c.holdout_count);
}

void apply(const ConfigFile &f, classifier::TrainConfig &c)
{
    set_num(f, "classifier", "batch_size", c.batch_size);
    set_num(f, "classifier", "epochs", c.epochs);
    set_num(f, "classifier", "learning_rate", c.learning_rate);
}

void apply(const ConfigFile &f, env::EnvConfig &c)
{
    if (const auto v = f.get("env", "variant")) {
        c.variant = env::parse_variant(static_cast<int>(to_unsigned("env", "variant", *v)));
    }
    set_num(f, "env", "episode_length", c.episode_length);
    set_num(f, "env", "delta_max", c.delta_max);
    set_num(f, "env", "s_min", c.s_min);
    set_num(f, "env", "s_max", c.s_max);
    set_num(f, "env", "resolution", c.resolution);
}

void apply(const ConfigFile &f, ppo::PPOConfig &c)
{
    set_num(f, "ppo", "learning_rate", c.learning_rate);
    set_num(f, "ppo", "minibatch_size", c.minibatch_size);
    set_num(f, "ppo", "entropy_coef", c.entropy_coef);
    set_num(f, "ppo", "clip_epsilon", c.clip_epsilon);
    set_num(f, "ppo", "gamma", c.gamma);
    set_num(f, "ppo", "gae_lambda", c.gae_lambda);
    set_num(f, "ppo", "value_coef", c.value_coef);
    set_num(f, "ppo", "epochs_per_update", c.epochs_per_update);
    set_num(f, "ppo", "rollout_steps", c.rollout_steps);
    set_num(f, "ppo", "total_updates", c.total_updates);
    set_num(f, "ppo", "max_grad_norm", c.max_grad_norm);
    set_num(f, "ppo", "eval_interval", c.eval_interval);
    set_num(f, "ppo", "eval_images", c.eval_images);
}

void apply(const ConfigFile &f, baselines::MilTrainConfig &c)
{
    set_num(f, "mil", "epochs", c.epochs);
    set_num(f, "mil", "batch_size", c.batch_size);
    set_num(f, "mil", "learning_rate", c.learning_rate);
}

void apply(const ConfigFile &f, baselines::SupervisedConfig &c)
{
    set_num(f, "supervised", "epochs", c.epochs);
    set_num(f, "supervised", "batch_size", c.batch_size);
    set_num(f, "supervised", "learning_rate", c.learning_rate);
}

void apply(const ConfigFile &f, MilLayout &layout)
{
    set_num(f, "mil", "patch_side", layout.patch_side);
    set_num(f, "mil", "patches_per_bag", layout.patches_per_bag);
    set_num(f, "mil", "stride", layout.stride);
}

} // namespace weakloc
