#include <weakloc/baselines.hpp>

#include <weakloc/adam.hpp>
#include <weakloc/cropenv.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace weakloc::baselines
{

namespace
{

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

std::vector<ConvBlock> make_blocks(std::span<const std::size_t> widths, Rng &rng)
{
    std::vector<ConvBlock> blocks;
    std::size_t c = 3;
    for (auto w : widths) {
        blocks.emplace_back(c, w, rng);
        c = w;
    }
    return blocks;
}

Tensor trunk(Tape &tape, const std::vector<ConvBlock> &blocks, const Tensor &batch)
{
    Tensor h = batch;
    for (const auto &b : blocks) {
        h = b.forward(tape, h);
    }
    return ops::flatten(tape, h);
}

Tensor at_resolution(const Tensor &image, std::size_t k)
{
    if (image.dim(1) == k && image.dim(2) == k) {
        return image;
    }
    return resample(image, k);
}

std::vector<double> box_target(const Rect &r)
{
    return {r.cx, r.cy, r.w, r.h};
}

constexpr std::array<std::size_t, 5> regressor_widths{8, 16, 32, 32, 32};

} // namespace

std::size_t default_patch_side(std::size_t image_side)
{
    return std::max<std::size_t>(5, static_cast<std::size_t>(std::lround(0.08 * static_cast<double>(image_side))));
}

std::size_t default_patches_per_bag(std::size_t image_side)
{
    const double r = static_cast<double>(image_side) / 200.0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(400.0 * r * r)));
}

int bag_label(const std::vector<Rect> &instance_rects, const std::optional<Rect> &truth)
{
    if (!truth) {
        return 0;
    }
    return std::any_of(instance_rects.begin(), instance_rects.end(),
                       [&](const Rect &r) { return intersects(r, *truth); })
               ? 1
               : 0;
}

Tensor crop_patch(const Tensor &image, std::size_t x0, std::size_t y0, std::size_t side)
{
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (side == 0 || x0 + side > w || y0 + side > h) {
        throw Error("patch at (" + std::to_string(x0) + "," + std::to_string(y0) + ") of side " + std::to_string(side)
                    + " does not fit a " + std::to_string(h) + "x" + std::to_string(w) + " image");
    }
    std::vector<double> v;
    v.reserve(c * side * side);
    const auto src = image.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = y0; y < y0 + side; ++y) {
            const auto row = src.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w + x0);
            v.insert(v.end(), row, row + static_cast<std::ptrdiff_t>(side));
        }
    }
    return Tensor::from({c, side, side}, std::move(v));
}

Rect patch_rect(std::size_t x0, std::size_t y0, std::size_t side, std::size_t height, std::size_t width)
{
    const auto s = static_cast<double>(side);
    return Rect::from_edges(static_cast<double>(x0) / static_cast<double>(width),
                            static_cast<double>(y0) / static_cast<double>(height),
                            (static_cast<double>(x0) + s) / static_cast<double>(width),
                            (static_cast<double>(y0) + s) / static_cast<double>(height));
}

std::vector<Bag> build_bags(const synth::Dataset &data, std::size_t patch_side, std::size_t patches_per_bag,
                            std::uint64_t seed)
{
    if (patches_per_bag < 1) {
        throw Error("patches_per_bag must be >= 1");
    }
    std::vector<Bag> bags;
    bags.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto &image = data.image(i);
        const std::size_t h = image.dim(1), w = image.dim(2);
        if (patch_side < 1 || patch_side > h || patch_side > w) {
            throw Error("patch side " + std::to_string(patch_side) + " does not fit a " + std::to_string(h) + "x"
                        + std::to_string(w) + " image");
        }
        Rng rng(substream_seed(seed, i));
        Bag bag;
        bag.id = data.id(i);
        for (std::size_t k = 0; k < patches_per_bag; ++k) {
            const auto x0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(w - patch_side)));
            const auto y0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h - patch_side)));
            bag.instances.push_back(crop_patch(image, x0, y0, patch_side));
            bag.instance_rects.push_back(patch_rect(x0, y0, patch_side, h, w));
        }
        std::optional<Rect> truth;
        if (data.label(i) == 1) {
            const auto &m = data.mask(i);
            if (m && !m->empty()) {
                truth = m->bounding_rect();
            }
        }
        bag.label = bag_label(bag.instance_rects, truth);
        bags.push_back(std::move(bag));
    }
    return bags;
}

MILNet::MILNet(std::uint64_t seed, std::size_t patch_side)
    : patch_side_(patch_side), blocks_([&] {
          Rng rng(seed);
          return make_blocks(widths, rng);
      }()),
      head_([&] {
          Rng rng(mix64(seed));
          const auto side = pooled_side(patch_side, widths.size());
          return Dense(widths.back() * side * side, 1, rng);
      }())
{
    if (patch_side < 1) {
        throw Error("MIL patch side must be >= 1");
    }
}

Tensor MILNet::logits(Tape &tape, const Tensor &batch) const
{
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != patch_side_ || batch.dim(3) != patch_side_) {
        throw ShapeError("MIL encoder expects [N,3," + std::to_string(patch_side_) + "," + std::to_string(patch_side_)
                         + "], got " + shape_to_string(batch.shape()));
    }
    return head_.forward(tape, trunk(tape, blocks_, batch));
}

std::vector<double> MILNet::instance_scores(const std::vector<Tensor> &patches) const
{
    if (patches.empty()) {
        return {};
    }
    Tape tape(false);
    const auto out = ops::activation(tape, logits(tape, stack(patches)), ops::Activation::sigmoid);
    return {out.data().begin(), out.data().end()};
}

double MILNet::bag_score(const Bag &bag) const
{
    const auto scores = instance_scores(bag.instances);
    if (scores.empty()) {
        throw Error("empty bag " + bag.id);
    }
    return *std::max_element(scores.begin(), scores.end());
}

ParameterList MILNet::parameters() const
{
    ParameterList out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("mil.block" + std::to_string(i), out);
    }
    head_.collect("mil.head", out);
    return out;
}

double bag_score_gap(const MILNet &net, const std::vector<Bag> &bags)
{
    double pos = 0.0, neg = 0.0;
    std::size_t np = 0, nn = 0;
    for (const auto &b : bags) {
        const double s = net.bag_score(b);
        if (b.label == 1) {
            pos += s;
            ++np;
        } else {
            neg += s;
            ++nn;
        }
    }
    if (np == 0 || nn == 0) {
        throw Error("bag_score_gap needs both bag classes");
    }
    return pos / static_cast<double>(np) - neg / static_cast<double>(nn);
}

MilTrainResult train_mil(const std::vector<Bag> &train, const std::vector<Bag> &val, const MilTrainConfig &config)
{
    if (config.epochs < 1 || config.batch_size < 1) {
        throw Error("MIL training needs epochs >= 1 and batch_size >= 1");
    }
    const auto pos = std::count_if(train.begin(), train.end(), [](const Bag &b) { return b.label == 1; });
    if (pos == 0 || static_cast<std::size_t>(pos) == train.size()) {
        throw Error("MIL training needs both bag classes; got " + std::to_string(pos) + " positive bags of "
                    + std::to_string(train.size()));
    }
    const std::size_t side = train.front().instances.at(0).dim(1);
    MilTrainResult result{MILNet(config.seed, side), {}};
    auto &net = result.net;
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    Adam adam(net.parameters(), adam_config);
    Rng rng(substream_seed(config.seed, 1));

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> chosen;
            std::vector<double> labels;
            for (std::size_t k = start; k < end; ++k) {
                const auto &bag = train[order[k]];
                const auto scores = net.instance_scores(bag.instances);
                const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
                chosen.push_back(bag.instances[best]);
                labels.push_back(static_cast<double>(bag.label));
            }
            adam.zero_grad();
            Tape tape;
            const auto pred = ops::activation(tape, net.logits(tape, stack(chosen)), ops::Activation::sigmoid);
            auto loss = ops::bce_loss(tape, labels, pred);
            tape.backward(loss);
            adam.step();
            loss_sum += loss.item();
            ++batches;
        }
        const bool val_ok = std::any_of(val.begin(), val.end(), [](const Bag &b) { return b.label == 1; })
                            && std::any_of(val.begin(), val.end(), [](const Bag &b) { return b.label == 0; });
        result.curve.push_back(
            {epoch + 1, loss_sum / static_cast<double>(batches), val_ok ? bag_score_gap(net, val) : 0.0});
    }
    return result;
}

Rect localize_from_scores(const std::vector<Rect> &patch_rects, const std::vector<double> &scores)
{
    if (patch_rects.empty() || patch_rects.size() != scores.size()) {
        throw Error("localize_from_scores needs one score per patch");
    }
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    const double threshold = 0.5 * scores[best];
    double l = std::numeric_limits<double>::infinity(), t = l, r = -l, b = -l;
    bool any = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= threshold) {
            l = std::min(l, patch_rects[i].left());
            t = std::min(t, patch_rects[i].top());
            r = std::max(r, patch_rects[i].right());
            b = std::max(b, patch_rects[i].bottom());
            any = true;
        }
    }
    return any ? Rect::from_edges(l, t, r, b) : patch_rects[best];
}

Rect mil_localize(const Tensor &image, const MILNet &net, std::size_t stride)
{
    const std::size_t p = net.patch_side();
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (p > h || p > w) {
        throw Error("MIL patch side exceeds the image");
    }
    if (stride == 0) {
        stride = std::max<std::size_t>(1, p / 2);
    }
    auto positions = [&](std::size_t extent) {
        std::vector<std::size_t> out;
        for (std::size_t x = 0; x + p <= extent; x += stride) {
            out.push_back(x);
        }
        if (out.back() + p < extent) {
            out.push_back(extent - p);
        }
        return out;
    };
    std::vector<Tensor> patches;
    std::vector<Rect> rects;
    for (auto y0 : positions(h)) {
        for (auto x0 : positions(w)) {
            patches.push_back(crop_patch(image, x0, y0, p));
            rects.push_back(patch_rect(x0, y0, p, h, w));
        }
    }
    std::vector<double> scores;
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < patches.size(); start += chunk) {
        const std::vector<Tensor> part(patches.begin() + static_cast<std::ptrdiff_t>(start),
                                       patches.begin() + static_cast<std::ptrdiff_t>(std::min(patches.size(), start + chunk)));
        const auto s = net.instance_scores(part);
        scores.insert(scores.end(), s.begin(), s.end());
    }
    return env::clamp_rect(localize_from_scores(rects, scores), env::EnvConfig{});
}

RegressorNet::RegressorNet(std::uint64_t seed, std::size_t resolution)
    : resolution_(resolution), blocks_([&] {
          Rng rng(seed);
          return make_blocks(regressor_widths, rng);
      }()),
      head_([&] {
          Rng rng(mix64(seed));
          const auto side = pooled_side(resolution, regressor_widths.size());
          return Dense(regressor_widths.back() * side * side, 4, rng);
      }())
{
}

Tensor RegressorNet::forward(Tape &tape, const Tensor &batch) const
{
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != resolution_ || batch.dim(3) != resolution_) {
        throw ShapeError("regressor expects [N,3," + std::to_string(resolution_) + "," + std::to_string(resolution_)
                         + "], got " + shape_to_string(batch.shape()));
    }
    return ops::activation(tape, head_.forward(tape, trunk(tape, blocks_, batch)), ops::Activation::sigmoid);
}

Rect RegressorNet::predict(const Tensor &image) const
{
    Tape tape(false);
    const auto x = at_resolution(image, resolution_);
    const auto out = forward(tape, x.reshaped({1, 3, resolution_, resolution_}));
    return {out[0], out[1], out[2], out[3]};
}

ParameterList RegressorNet::parameters() const
{
    ParameterList out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("regressor.block" + std::to_string(i), out);
    }
    head_.collect("regressor.head", out);
    return out;
}

double box_mse(const RegressorNet &net, const synth::Dataset &data)
{
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.label(i) != 1) {
            continue;
        }
        const auto p = net.predict(data.image(i));
        const auto &b = *data.box(i);
        total += ((p.cx - b.cx) * (p.cx - b.cx) + (p.cy - b.cy) * (p.cy - b.cy) + (p.w - b.w) * (p.w - b.w)
                  + (p.h - b.h) * (p.h - b.h))
                 / 4.0;
        ++n;
    }
    if (n == 0) {
        throw Error("box_mse needs positive samples");
    }
    return total / static_cast<double>(n);
}

SupervisedResult train_supervised(const synth::Dataset &train, const synth::Dataset &val,
                                  const SupervisedConfig &config)
{
    if (config.epochs < 1 || config.batch_size < 1) {
        throw Error("supervised training needs epochs >= 1 and batch_size >= 1");
    }
    SupervisedResult result{RegressorNet(config.seed), {}};
    auto &net = result.net;
    std::vector<Tensor> inputs;
    std::vector<std::vector<double>> targets;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.label(i) != 1) {
            continue;
        }
        const auto &box = train.box(i);
        if (!box) {
            throw Error("positive sample " + train.id(i) + " has no box");
        }
        inputs.push_back(at_resolution(train.image(i), net.resolution()));
        targets.push_back(box_target(*box));
    }
    if (inputs.empty()) {
        throw Error("supervised training needs positive samples with boxes");
    }

    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    Adam adam(net.parameters(), adam_config);
    Rng rng(substream_seed(config.seed, 1));
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    const bool has_val = val.positives() > 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> items;
            std::vector<double> flat;
            for (std::size_t k = start; k < end; ++k) {
                items.push_back(inputs[order[k]]);
                flat.insert(flat.end(), targets[order[k]].begin(), targets[order[k]].end());
            }
            adam.zero_grad();
            Tape tape;
            const auto pred = net.forward(tape, stack(items));
            auto loss = ops::mse_loss(tape, pred, flat);
            tape.backward(loss);
            adam.step();
            loss_sum += loss.item();
            ++batches;
        }
        result.curve.push_back(
            {epoch + 1, loss_sum / static_cast<double>(batches), has_val ? box_mse(net, val) : 0.0});
    }
    return result;
}

void write_mil_curve_csv(const std::filesystem::path &path, const std::vector<MilEpochStats> &curve)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "epoch,train_loss,val_score_gap\n";
    os.precision(17);
    for (const auto &e : curve) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_score_gap << '\n';
    }
}

void write_supervised_curve_csv(const std::filesystem::path &path, const std::vector<SupervisedEpochStats> &curve)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "epoch,train_mse,val_mse\n";
    os.precision(17);
    for (const auto &e : curve) {
        os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
    }
}

} // namespace weakloc::baselines
