#include <weakloc/nn.hpp>
#include <weakloc/binary_io.hpp>

#include <cmath>
#include <fstream>

namespace weakloc
{

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng &rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto t = Tensor::zeros(std::move(shape), true);
    for (double &v : t.data()) {
        v = rng.uniform(-bound, bound);
    }
    return t;
}

ConvBlock::ConvBlock(std::size_t in_channels, std::size_t out_channels, Rng &rng)
    : kernels(glorot_uniform({out_channels, in_channels, 3, 3}, in_channels * 9, out_channels * 9, rng)),
      bias(Tensor::zeros({out_channels}, true))
{
}

Tensor ConvBlock::forward(Tape &tape, const Tensor &x) const
{
    auto h = ops::conv2d(tape, x, kernels, bias);
    h = ops::activation(tape, h, ops::Activation::relu);
    return ops::maxpool2d(tape, h);
}

void ConvBlock::collect(const std::string &prefix, ParameterList &out) const
{
    out.push_back({prefix + ".kernels", kernels});
    out.push_back({prefix + ".bias", bias});
}

Dense::Dense(std::size_t in_features, std::size_t out_features, Rng &rng)
    : weights(glorot_uniform({out_features, in_features}, in_features, out_features, rng)),
      bias(Tensor::zeros({out_features}, true))
{
}

Tensor Dense::forward(Tape &tape, const Tensor &x) const
{
    return ops::dense(tape, x, weights, bias);
}

void Dense::collect(const std::string &prefix, ParameterList &out) const
{
    out.push_back({prefix + ".weights", weights});
    out.push_back({prefix + ".bias", bias});
}

std::size_t pooled_side(std::size_t side, std::size_t blocks)
{
    for (std::size_t i = 0; i < blocks; ++i) {
        side = (side + 1) / 2;
    }
    return side;
}

void zero_grads(ParameterList &params)
{
    for (auto &p : params) {
        p.value.zero_grad();
    }
}

void copy_parameters(const ParameterList &from, ParameterList &to)
{
    if (from.size() != to.size()) {
        throw Error("parameter count mismatch: " + std::to_string(from.size()) + " vs " + std::to_string(to.size()));
    }
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i].name != to[i].name || from[i].value.shape() != to[i].value.shape()) {
            throw ShapeError("parameter '" + to[i].name + "' " + shape_to_string(to[i].value.shape())
                             + " does not match '" + from[i].name + "' " + shape_to_string(from[i].value.shape()));
        }
        const auto src = from[i].value.data();
        auto dst = to[i].value.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

void save_checkpoint(const std::filesystem::path &path, const ParameterList &params)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot open checkpoint for writing: " + path.string());
    }
    os.write(checkpoint_magic, sizeof(checkpoint_magic));
    io::write_le(os, checkpoint_version);
    io::write_le(os, static_cast<std::uint64_t>(params.size()));
    for (const auto &p : params) {
        io::write_le(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const auto &shape = p.value.shape();
        io::write_le(os, static_cast<std::uint32_t>(shape.size()));
        for (auto e : shape) {
            io::write_le(os, static_cast<std::uint64_t>(e));
        }
        for (double v : p.value.data()) {
            io::write_le(os, v);
        }
    }
    if (!os) {
        throw Error("write failed: " + path.string());
    }
}

ParameterList read_checkpoint(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open checkpoint: " + path.string());
    }
    char magic[sizeof(checkpoint_magic)] = {};
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(checkpoint_magic))) {
        throw Error("not a checkpoint file (bad magic): " + path.string());
    }
    const auto version = io::read_le<std::uint8_t>(is, path);
    if (version != checkpoint_version) {
        throw Error("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
    }
    const auto count = io::read_le<std::uint64_t>(is, path);
    ParameterList out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = io::read_le<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = io::read_le<std::uint32_t>(is, path);
        Shape shape(rank);
        for (auto &e : shape) {
            e = static_cast<std::size_t>(io::read_le<std::uint64_t>(is, path));
        }
        std::vector<double> values(shape_numel(shape));
        for (auto &v : values) {
            v = io::read_le<double>(is, path);
        }
        out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
    }
    return out;
}

void load_checkpoint(const std::filesystem::path &path, ParameterList &params)
{
    copy_parameters(read_checkpoint(path), params);
}

} // namespace weakloc
