#ifndef WEAKLOC_CLASSIFIER_HPP
#define WEAKLOC_CLASSIFIER_HPP

#include <weakloc/nn.hpp>
#include <weakloc/synthdata.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace weakloc::classifier
{

inline constexpr std::size_t default_resolution = 64;

/// Object-ness network: five conv3x3/relu/maxpool blocks, one dense layer, sigmoid.
class ClassifierNet
{
public:
    explicit ClassifierNet(std::uint64_t seed, std::size_t resolution = default_resolution);

    /// [N,3,K,K] -> [N,1] probabilities.
    Tensor forward(Tape &tape, const Tensor &batch) const;
    /// Pre-sigmoid scores, [N,1].
    Tensor logits(Tape &tape, const Tensor &batch) const;

    [[nodiscard]] std::size_t resolution() const noexcept { return resolution_; }
    [[nodiscard]] ParameterList parameters() const;

    static constexpr std::array<std::size_t, 5> widths{8, 16, 32, 32, 32};

private:
    std::size_t resolution_;
    std::vector<ConvBlock> blocks_;
    Dense head_;
};

/// Object-ness score f(x; w) of an image or crop of any size >= 4x4: the input
/// is bilinearly resampled to the network resolution and scored. Pure in (input, net).
double objectness(const ClassifierNet &net, const Tensor &image_or_crop);

/// Scores for a batch of [3,K,K] inputs already at network resolution.
std::vector<double> objectness_batch(const ClassifierNet &net, const std::vector<Tensor> &inputs);

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 8;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch;
    double train_loss;
    double val_accuracy;
};

struct TrainResult {
    ClassifierNet net;
    std::vector<EpochStats> curve;
};

/// Minimize binary cross-entropy on image-level presence labels only.
/// `label_flip` trains on inverted labels (used to check the loss's label symmetry).
TrainResult train_classifier(const synth::Dataset &train, const synth::Dataset &val, const TrainConfig &config,
                             bool label_flip = false);

double accuracy(const ClassifierNet &net, const synth::Dataset &data, bool label_flip = false);

void write_curve_csv(const std::filesystem::path &path, const std::vector<EpochStats> &curve);

} // namespace weakloc::classifier

#endif
