#ifndef WEAKLOC_CONFIG_HPP
#define WEAKLOC_CONFIG_HPP

#include <weakloc/baselines.hpp>
#include <weakloc/classifier.hpp>
#include <weakloc/cropenv.hpp>
#include <weakloc/ppo.hpp>
#include <weakloc/synthdata.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace weakloc
{

/// INI-style settings: `[section]` headers followed by `key = value` lines.
/// `#` and `;` start comments. Keys before any header belong to section "".
class ConfigFile
{
public:
    static ConfigFile parse(std::istream &is, const std::string &origin = "<config>");
    static ConfigFile load(const std::filesystem::path &path);

    [[nodiscard]] std::optional<std::string> get(const std::string &section, const std::string &key) const;
    [[nodiscard]] bool has_section(const std::string &section) const;
    [[nodiscard]] const std::map<std::string, std::map<std::string, std::string>> &sections() const noexcept
    {
        return sections_;
    }

    /// Throws if the file names a section or key outside the known schema.
    void check_known_keys() const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
    std::string origin_;
};

/// Overlay `[data]` settings.
void apply(const ConfigFile &file, synth::SynthConfig &config);
/// Overlay `[classifier]` settings.
void apply(const ConfigFile &file, classifier::TrainConfig &config);
/// Overlay `[env]` settings.
void apply(const ConfigFile &file, env::EnvConfig &config);
/// Overlay `[ppo]` settings.
void apply(const ConfigFile &file, ppo::PPOConfig &config);
/// Overlay `[mil]` training settings.
void apply(const ConfigFile &file, baselines::MilTrainConfig &config);
/// Overlay `[supervised]` settings.
void apply(const ConfigFile &file, baselines::SupervisedConfig &config);

/// Bag layout from `[mil]` (patch_side, patches_per_bag, stride); 0 means "scale with the image".
struct MilLayout {
    std::size_t patch_side = 0;
    std::size_t patches_per_bag = 0;
    std::size_t stride = 0;
};
void apply(const ConfigFile &file, MilLayout &layout);

} // namespace weakloc

#endif
