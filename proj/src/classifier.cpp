#include <weakloc/classifier.hpp>

#include <weakloc/adam.hpp>
#include <weakloc/geometry.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace weakloc::classifier
{

namespace
{

std::vector<ConvBlock> make_blocks(std::size_t in_channels, Rng &rng)
{
    std::vector<ConvBlock> blocks;
    for (auto w : ClassifierNet::widths) {
        blocks.emplace_back(in_channels, w, rng);
        in_channels = w;
    }
    return blocks;
}

std::size_t head_inputs(std::size_t resolution)
{
    const auto side = pooled_side(resolution, ClassifierNet::widths.size());
    return ClassifierNet::widths.back() * side * side;
}

Tensor stack(const std::vector<Tensor> &items)
{
    const auto &s = items.front().shape();
    Shape shape{items.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    std::vector<double> values;
    values.reserve(shape_numel(shape));
    for (const auto &t : items) {
        if (t.shape() != s) {
            throw ShapeError("cannot batch " + shape_to_string(t.shape()) + " with " + shape_to_string(s));
        }
        values.insert(values.end(), t.data().begin(), t.data().end());
    }
    return Tensor::from(std::move(shape), std::move(values));
}

Tensor at_resolution(const Tensor &image, std::size_t k)
{
    if (image.dim(1) == k && image.dim(2) == k) {
        return image;
    }
    return resample(image, k);
}

} // namespace

ClassifierNet::ClassifierNet(std::uint64_t seed, std::size_t resolution)
    : resolution_(resolution), blocks_([&] {
          Rng rng(seed);
          return make_blocks(3, rng);
      }()),
      head_([&] {
          Rng rng(mix64(seed));
          return Dense(head_inputs(resolution), 1, rng);
      }())
{
}

Tensor ClassifierNet::forward(Tape &tape, const Tensor &batch) const
{
    return ops::activation(tape, logits(tape, batch), ops::Activation::sigmoid);
}

Tensor ClassifierNet::logits(Tape &tape, const Tensor &batch) const
{
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != resolution_ || batch.dim(3) != resolution_) {
        throw ShapeError("classifier expects [N,3," + std::to_string(resolution_) + "," + std::to_string(resolution_)
                         + "], got " + shape_to_string(batch.shape()));
    }
    Tensor h = batch;
    for (const auto &b : blocks_) {
        h = b.forward(tape, h);
    }
    h = ops::flatten(tape, h);
    return head_.forward(tape, h);
}

ParameterList ClassifierNet::parameters() const
{
    ParameterList out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("classifier.block" + std::to_string(i), out);
    }
    head_.collect("classifier.head", out);
    return out;
}

double objectness(const ClassifierNet &net, const Tensor &image_or_crop)
{
    if (image_or_crop.rank() != 3 || image_or_crop.dim(0) != 3) {
        throw ShapeError("objectness expects [3,h,w], got " + shape_to_string(image_or_crop.shape()));
    }
    if (image_or_crop.dim(1) < 4 || image_or_crop.dim(2) < 4) {
        throw Error("objectness: input " + shape_to_string(image_or_crop.shape()) + " is smaller than 4x4");
    }
    return objectness_batch(net, {at_resolution(image_or_crop, net.resolution())}).front();
}

std::vector<double> objectness_batch(const ClassifierNet &net, const std::vector<Tensor> &inputs)
{
    if (inputs.empty()) {
        return {};
    }
    Tape tape(false);
    const auto out = net.forward(tape, stack(inputs));
    return {out.data().begin(), out.data().end()};
}

double accuracy(const ClassifierNet &net, const synth::Dataset &data, bool label_flip)
{
    if (data.empty()) {
        throw Error("accuracy on an empty dataset");
    }
    std::size_t correct = 0;
    constexpr std::size_t chunk = 32;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        std::vector<Tensor> batch;
        const std::size_t end = std::min(data.size(), start + chunk);
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(at_resolution(data.image(i), net.resolution()));
        }
        const auto scores = objectness_batch(net, batch);
        for (std::size_t i = start; i < end; ++i) {
            const int label = label_flip ? 1 - data.label(i) : data.label(i);
            correct += ((scores[i - start] >= 0.5 ? 1 : 0) == label) ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_classifier(const synth::Dataset &train, const synth::Dataset &val, const TrainConfig &config,
                             bool label_flip)
{
    if (config.batch_size < 1 || config.epochs < 1) {
        throw Error("classifier training needs batch_size >= 1 and epochs >= 1");
    }
    const auto pos = train.positives();
    if (pos == 0 || pos == train.size()) {
        throw Error("classifier training needs both classes; train split has " + std::to_string(pos) + " positives of "
                    + std::to_string(train.size()));
    }

    TrainResult result{ClassifierNet(config.seed), {}};
    auto &net = result.net;
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    Adam adam(net.parameters(), adam_config);
    Rng rng(substream_seed(config.seed, 1));

    std::vector<Tensor> inputs;
    inputs.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        inputs.push_back(at_resolution(train.image(i), net.resolution()));
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> items;
            std::vector<double> labels;
            for (std::size_t k = start; k < end; ++k) {
                items.push_back(inputs[order[k]]);
                const int y = train.label(order[k]);
                labels.push_back(label_flip ? 1.0 - y : static_cast<double>(y));
            }
            adam.zero_grad();
            Tape tape;
            const auto pred = net.forward(tape, stack(items));
            auto loss = ops::bce_loss(tape, labels, pred);
            tape.backward(loss);
            adam.step();
            loss_sum += loss.item();
            ++batches;
        }
        result.curve.push_back({epoch + 1, loss_sum / static_cast<double>(batches),
                                val.empty() ? 0.0 : accuracy(net, val, label_flip)});
    }
    return result;
}

void write_curve_csv(const std::filesystem::path &path, const std::vector<EpochStats> &curve)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "epoch,train_loss,val_accuracy\n";
    os.precision(17);
    for (const auto &e : curve) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << '\n';
    }
}

} // namespace weakloc::classifier
