#ifndef WEAKLOC_OPS_HPP
#define WEAKLOC_OPS_HPP

#include <weakloc/tape.hpp>
#include <weakloc/tensor.hpp>

#include <span>

namespace weakloc::ops
{

enum class Activation { relu, sigmoid, tanh };

/// 3x3 convolution, stride 1, zero padding 1.
///
/// input is [C_in,H,W] or batched [N,C_in,H,W]; kernels [C_out,C_in,3,3]; bias [C_out].
/// The output keeps the input's spatial size and batching.
Tensor conv2d(Tape &tape, const Tensor &input, const Tensor &kernels, const Tensor &bias);

/// 2x2 max pooling with stride 2. A trailing odd row/column is pooled as a
/// partial window. Ties route the gradient to the first maximum in row-major order.
Tensor maxpool2d(Tape &tape, const Tensor &input);

/// Affine map. input is [n] or [N,n]; weights [m,n]; bias [m].
Tensor dense(Tape &tape, const Tensor &input, const Tensor &weights, const Tensor &bias);

Tensor activation(Tape &tape, const Tensor &input, Activation kind);

/// Differentiable reshape (values copied, gradient passed through).
Tensor reshape(Tape &tape, const Tensor &input, Shape shape);

/// [N,...] -> [N, prod(...)].
Tensor flatten(Tape &tape, const Tensor &input);

Tensor add(Tape &tape, const Tensor &a, const Tensor &b);
Tensor mul(Tape &tape, const Tensor &a, const Tensor &b);
Tensor scale(Tape &tape, const Tensor &a, double factor);
Tensor sum(Tape &tape, const Tensor &a);
Tensor mean(Tape &tape, const Tensor &a);

/// Maximum over all elements; the gradient goes to the first maximal element.
Tensor max_all(Tape &tape, const Tensor &a);

/// Rows [begin, end) of the leading dimension.
Tensor slice_rows(Tape &tape, const Tensor &a, std::size_t begin, std::size_t end);

/// Binary cross-entropy, -(1/N) sum(y log p + (1-y) log(1-p)), with p clamped to
/// [1e-7, 1 - 1e-7]. Differentiable in the predictions.
Tensor bce_loss(Tape &tape, std::span<const double> labels, const Tensor &predictions);

/// Mean of squared differences over all elements.
Tensor mse_loss(Tape &tape, const Tensor &predictions, std::span<const double> targets);

inline constexpr double bce_clamp = 1e-7;

} // namespace weakloc::ops

#endif
