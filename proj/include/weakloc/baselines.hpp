#ifndef WEAKLOC_BASELINES_HPP
#define WEAKLOC_BASELINES_HPP

#include <weakloc/geometry.hpp>
#include <weakloc/nn.hpp>
#include <weakloc/synthdata.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace weakloc::baselines
{

/// Patch side P = round(0.08 * image_side), at least 5.
std::size_t default_patch_side(std::size_t image_side);

/// round(400 * (image_side / 200)^2), at least 1.
std::size_t default_patches_per_bag(std::size_t image_side);

struct Bag {
    std::string id;
    std::vector<Tensor> instances;    ///< [3,P,P] patches
    std::vector<Rect> instance_rects; ///< normalized patch rectangles
    int label = 0;
};

/// 1 iff any instance rectangle shares area with the truth rectangle.
int bag_label(const std::vector<Rect> &instance_rects, const std::optional<Rect> &truth);

/// Crop the integer pixel block [x0, x0+side) x [y0, y0+side) of a [C,H,W] image.
Tensor crop_patch(const Tensor &image, std::size_t x0, std::size_t y0, std::size_t side);

/// Normalized rectangle of a pixel block.
Rect patch_rect(std::size_t x0, std::size_t y0, std::size_t side, std::size_t height, std::size_t width);

/// Uniform-random patch positions per image; the label uses the bounding box of the
/// ground-truth mask. The only place the MIL path reads localization labels.
std::vector<Bag> build_bags(const synth::Dataset &data, std::size_t patch_side, std::size_t patches_per_bag,
                            std::uint64_t seed);

/// Instance encoder (three conv3x3/relu/maxpool blocks and a dense layer to a scalar)
/// with max aggregation over instances.
class MILNet
{
public:
    MILNet(std::uint64_t seed, std::size_t patch_side);

    /// Instance logits, [N,1], for a [N,3,P,P] batch.
    Tensor logits(Tape &tape, const Tensor &batch) const;
    [[nodiscard]] std::vector<double> instance_scores(const std::vector<Tensor> &patches) const;
    /// Max over instance scores.
    [[nodiscard]] double bag_score(const Bag &bag) const;

    [[nodiscard]] std::size_t patch_side() const noexcept { return patch_side_; }
    [[nodiscard]] ParameterList parameters() const;

    static constexpr std::array<std::size_t, 3> widths{8, 16, 32};

private:
    std::size_t patch_side_;
    std::vector<ConvBlock> blocks_;
    Dense head_;
};

struct MilTrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
};

struct MilEpochStats {
    std::size_t epoch;
    double train_loss;
    double val_score_gap; ///< mean positive minus mean negative bag score on validation bags
};

struct MilTrainResult {
    MILNet net;
    std::vector<MilEpochStats> curve;
};

/// BCE on the max-aggregated bag score. The gradient reaches only the argmax instance.
MilTrainResult train_mil(const std::vector<Bag> &train, const std::vector<Bag> &val, const MilTrainConfig &config);

/// Mean positive-bag score minus mean negative-bag score.
double bag_score_gap(const MILNet &net, const std::vector<Bag> &bags);

/// Bounding rectangle of all patches scoring >= 0.5 * max; the best patch if none pass.
Rect localize_from_scores(const std::vector<Rect> &patch_rects, const std::vector<double> &scores);

/// Score a dense patch grid (stride 0 means P/2) and apply localize_from_scores; the
/// result is clamped to the crop-rectangle bounds.
Rect mil_localize(const Tensor &image, const MILNet &net, std::size_t stride = 0);

/// Classifier trunk with a 4-d sigmoid output read as (cx, cy, w, h).
class RegressorNet
{
public:
    explicit RegressorNet(std::uint64_t seed, std::size_t resolution = 64);

    /// [N,4] outputs in (0,1).
    Tensor forward(Tape &tape, const Tensor &batch) const;
    [[nodiscard]] Rect predict(const Tensor &image) const;

    [[nodiscard]] std::size_t resolution() const noexcept { return resolution_; }
    [[nodiscard]] ParameterList parameters() const;

private:
    std::size_t resolution_;
    std::vector<ConvBlock> blocks_;
    Dense head_;
};

struct SupervisedConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
};

struct SupervisedEpochStats {
    std::size_t epoch;
    double train_mse;
    double val_mse;
};

struct SupervisedResult {
    RegressorNet net;
    std::vector<SupervisedEpochStats> curve;
};

/// MSE between predicted and true boxes on positive samples only.
SupervisedResult train_supervised(const synth::Dataset &train, const synth::Dataset &val,
                                  const SupervisedConfig &config);

/// Mean squared box error over the positive samples of `data`.
double box_mse(const RegressorNet &net, const synth::Dataset &data);

void write_mil_curve_csv(const std::filesystem::path &path, const std::vector<MilEpochStats> &curve);
void write_supervised_curve_csv(const std::filesystem::path &path, const std::vector<SupervisedEpochStats> &curve);

} // namespace weakloc::baselines

#endif
