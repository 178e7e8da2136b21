#ifndef WEAKLOC_NN_HPP
#define WEAKLOC_NN_HPP

#include <weakloc/ops.hpp>
#include <weakloc/rng.hpp>
#include <weakloc/tensor.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace weakloc
{

/// A trainable tensor with a stable name (the checkpoint key).
struct Parameter {
    std::string name;
    Tensor value;
};

using ParameterList = std::vector<Parameter>;

/// Glorot/Xavier uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng &rng);

/// conv 3x3 -> relu -> maxpool 2x2.
struct ConvBlock {
    Tensor kernels;
    Tensor bias;

    ConvBlock(std::size_t in_channels, std::size_t out_channels, Rng &rng);
    Tensor forward(Tape &tape, const Tensor &x) const;
    void collect(const std::string &prefix, ParameterList &out) const;
};

struct Dense {
    Tensor weights;
    Tensor bias;

    Dense(std::size_t in_features, std::size_t out_features, Rng &rng);
    Tensor forward(Tape &tape, const Tensor &x) const;
    void collect(const std::string &prefix, ParameterList &out) const;
};

/// Spatial side after `blocks` halvings (ceil).
std::size_t pooled_side(std::size_t side, std::size_t blocks);

void zero_grads(ParameterList &params);

/// Copy values of `from` into `to`; names and shapes must match.
void copy_parameters(const ParameterList &from, ParameterList &to);

// Checkpoint file: "WLCKPT" magic, version byte, u64 parameter count, then per
// parameter u32 name length, name bytes, u32 rank, u64 extents, f64 values, all
// little-endian.
inline constexpr char checkpoint_magic[6] = {'W', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t checkpoint_version = 1;

void save_checkpoint(const std::filesystem::path &path, const ParameterList &params);
ParameterList read_checkpoint(const std::filesystem::path &path);
/// Load into an existing parameter list, checking every name and shape.
void load_checkpoint(const std::filesystem::path &path, ParameterList &params);

} // namespace weakloc

#endif
