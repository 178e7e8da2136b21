#ifndef WEAKLOC_CROPENV_HPP
#define WEAKLOC_CROPENV_HPP

#include <weakloc/classifier.hpp>
#include <weakloc/geometry.hpp>
#include <weakloc/tensor.hpp>

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace weakloc::env
{

using CropRect = Rect;
using Action = std::array<double, 4>;

/// State/action configurations:
///  config1 - observe previous crop, absolute action
///  config2 - observe previous crop, relative change of the previous rectangle
///  config3 - observe previous crop and the un-cropped image, absolute action
enum class Variant { config1 = 1, config2 = 2, config3 = 3 };

Variant parse_variant(int v);

struct EnvConfig {
    Variant variant = Variant::config3;
    std::size_t episode_length = 16;
    double delta_max = 0.1;
    double s_min = 0.1;
    double s_max = 1.0;
    /// Side of crop observations (the classifier resolution K).
    std::size_t resolution = classifier::default_resolution;

    void validate() const;
    [[nodiscard]] bool absolute() const noexcept { return variant != Variant::config2; }
    [[nodiscard]] std::size_t observation_channels() const noexcept { return variant == Variant::config3 ? 6 : 3; }
};

/// Size bounds and unit-square containment, with a 1e-12 tolerance.
bool satisfies_invariants(const CropRect &rect, const EnvConfig &config);

/// Clamp extents to [s_min, s_max], then shift the centre so the rectangle lies in the unit square.
CropRect clamp_rect(CropRect rect, const EnvConfig &config);

/// Map a raw (pre-tanh) action to the next crop rectangle.
CropRect apply_action(std::span<const double> raw_action, const CropRect &prev, const EnvConfig &config);

/// Pixels of `rect` bilinearly resampled to [C, side, side].
Tensor extract_crop(const Tensor &image, const CropRect &rect, std::size_t side);

/// Reward source: object-ness of a [3,K,K] crop. Implementations must be pure.
class Scorer
{
public:
    virtual ~Scorer() = default;
    [[nodiscard]] virtual double score(const Tensor &crop) const = 0;
    [[nodiscard]] virtual std::vector<double> score_batch(const std::vector<Tensor> &crops) const;
};

/// The frozen classifier as reward: identical to classifier::objectness.
class ClassifierScorer final : public Scorer
{
public:
    explicit ClassifierScorer(std::shared_ptr<const classifier::ClassifierNet> net) : net_(std::move(net)) {}
    [[nodiscard]] double score(const Tensor &crop) const override;
    [[nodiscard]] std::vector<double> score_batch(const std::vector<Tensor> &crops) const override;

private:
    std::shared_ptr<const classifier::ClassifierNet> net_;
};

/// Test double: mean intensity over all channels of the crop.
class MeanIntensityScorer final : public Scorer
{
public:
    [[nodiscard]] double score(const Tensor &crop) const override;
};

/// Test double: constant score.
class ConstantScorer final : public Scorer
{
public:
    explicit ConstantScorer(double value) : value_(value) {}
    [[nodiscard]] double score(const Tensor &) const override { return value_; }

private:
    double value_;
};

struct EnvState {
    Tensor image;          ///< the un-cropped image x_t, [3,H,W]
    Tensor image_resampled; ///< image at observation resolution (config3 observation half)
    CropRect rect;         ///< previous crop rectangle
    Tensor crop;           ///< previous crop pixels, [3,K,K]
    std::size_t step = 0;
};

struct StepResult {
    double reward;
    bool done;
};

struct TraceLine {
    std::size_t step;
    CropRect rect;
    double reward;
};

class CropEnv
{
public:
    CropEnv(std::shared_ptr<const Scorer> scorer, EnvConfig config);

    /// Start an episode: previous crop is the full image, step 0.
    [[nodiscard]] EnvState reset(const Tensor &image) const;

    /// Apply an action, score the new crop and advance. Throws after the episode is done.
    StepResult step(EnvState &state, std::span<const double> raw_action) const;

    /// Split form of step for batched scoring: transition only, returns the new crop.
    const Tensor &transition(EnvState &state, std::span<const double> raw_action) const;

    /// What the policy sees: crop (config1/2) or crop followed by the full image (config3).
    [[nodiscard]] Tensor observe(const EnvState &state) const;

    [[nodiscard]] const EnvConfig &config() const noexcept { return config_; }
    [[nodiscard]] const Scorer &scorer() const noexcept { return *scorer_; }

    /// Enable a per-step text trace ("step cx cy w h reward").
    void set_trace(std::ostream *os) noexcept { trace_ = os; }
    void trace(const TraceLine &line) const;

private:
    std::shared_ptr<const Scorer> scorer_;
    EnvConfig config_;
    std::ostream *trace_ = nullptr;
};

} // namespace weakloc::env

#endif
