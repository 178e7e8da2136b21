#ifndef WEAKLOC_SYNTHDATA_HPP
#define WEAKLOC_SYNTHDATA_HPP

#include <weakloc/geometry.hpp>
#include <weakloc/tensor.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace weakloc::synth
{

struct SynthConfig {
    std::size_t image_side = 64;
    std::size_t channels = 3;
    double lesion_probability = 0.5;
    /// Semi-axis range of the lesion ellipse, as fractions of the image side.
    std::array<double, 2> lesion_radius_range{0.08, 0.22};
    std::array<double, 2> gland_radius_range{0.30, 0.42};
    double noise_std = 0.05;
    std::size_t train_count = 600;
    std::size_t val_count = 200;
    std::size_t holdout_count = 200;

    /// Throws Error describing the first violated constraint.
    void validate() const;
};

// Intensity model. Channels mimic DWI (bright lesion), ADC (dark lesion), T2W (bright lesion).
inline constexpr double background_level = 0.35;
inline constexpr double gland_contrast = 0.15;
inline constexpr std::array<double, 3> lesion_contrast{0.35, -0.25, 0.20};

struct Sample {
    std::string id;
    Tensor image; ///< [3,S,S], values in [0,1], float32-representable
    int label = 0;
    std::optional<Rect> box; ///< tight bounds of mask, present iff label == 1
    std::optional<Mask> mask;
};

/// Draw one sample. Pure in (config, seed).
Sample render_sample(const SynthConfig &config, std::uint64_t seed, std::string id = {});

/// Geometry of the gland disc used for a sample (pixel units); exposed for tests.
struct GlandGeometry {
    double cx;
    double cy;
    double radius;
};
GlandGeometry gland_geometry(const SynthConfig &config, std::uint64_t seed);

enum class Split { train, val, holdout };
std::string split_name(Split s);

/// Counts of box/mask reads made through Dataset accessors.
struct LabelAudit {
    std::atomic<std::uint64_t> box_reads{0};
    std::atomic<std::uint64_t> mask_reads{0};

    void reset() noexcept
    {
        box_reads = 0;
        mask_reads = 0;
    }
    [[nodiscard]] std::uint64_t total() const noexcept { return box_reads + mask_reads; }
};

/// An immutable split. Localization ground truth is only reachable through the
/// audited box()/mask() accessors, so a training path can be checked for label use.
class Dataset
{
public:
    Dataset() = default;
    explicit Dataset(std::vector<Sample> samples);

    /// Read one split directory (manifest.jsonl plus raw files).
    static Dataset load(const std::filesystem::path &split_dir);

    [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }
    [[nodiscard]] bool empty() const noexcept { return samples_.empty(); }
    [[nodiscard]] const Tensor &image(std::size_t i) const { return samples_.at(i).image; }
    [[nodiscard]] int label(std::size_t i) const { return samples_.at(i).label; }
    [[nodiscard]] const std::string &id(std::size_t i) const { return samples_.at(i).id; }
    [[nodiscard]] std::size_t positives() const;

    [[nodiscard]] const std::optional<Rect> &box(std::size_t i) const;
    [[nodiscard]] const std::optional<Mask> &mask(std::size_t i) const;

    [[nodiscard]] LabelAudit &audit() const noexcept { return *audit_; }

    /// Subset by indices (shares the audit counters).
    [[nodiscard]] Dataset subset(const std::vector<std::size_t> &indices) const;

private:
    std::vector<Sample> samples_;
    std::shared_ptr<LabelAudit> audit_ = std::make_shared<LabelAudit>();
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset holdout;
};

/// Render all splits in memory. Sample k overall (train, then val, then holdout)
/// uses the substream seed (seed, k).
DatasetSplits generate_in_memory(const SynthConfig &config, std::uint64_t seed);

/// Write splits to `out_dir/{train,val,holdout}`; byte-identical for equal seeds.
void generate_dataset(const SynthConfig &config, std::uint64_t seed, const std::filesystem::path &out_dir);

DatasetSplits load_splits(const std::filesystem::path &data_dir);

/// Presence heuristic: positive if enough channel-0 pixels exceed a brightness threshold.
int threshold_heuristic(const Tensor &image);

} // namespace weakloc::synth

#endif
