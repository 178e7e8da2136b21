#include <weakloc/ops.hpp>

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <vector>

namespace weakloc::ops
{

namespace
{

struct Planes {
    std::size_t batch;
    std::size_t channels;
    std::size_t height;
    std::size_t width;
    bool batched;
};

Planes planes_of(const Tensor &t, const char *op)
{
    const auto &s = t.shape();
    if (s.size() == 3) {
        return {1, s[0], s[1], s[2], false};
    }
    if (s.size() == 4) {
        return {s[0], s[1], s[2], s[3], true};
    }
    throw ShapeError(std::string(op) + ": input rank must be 3 or 4, got shape " + shape_to_string(s));
}

Shape image_shape(const Planes &p, std::size_t channels, std::size_t h, std::size_t w)
{
    if (p.batched) {
        return {p.batch, channels, h, w};
    }
    return {channels, h, w};
}

void blas_single_thread()
{
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

// Row-major C[m,n] = A[m,k] * B[k,n] + beta * C, with optional transposes of A and B
// as stored (A^T stored [k,m], B^T stored [n,k]).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double *a, const double *b,
          double beta, double *c)
{
    const auto lda = static_cast<int>(trans_a ? m : k);
    const auto ldb = static_cast<int>(trans_b ? k : n);
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, lda, b, ldb, beta, c,
                static_cast<int>(n));
}

// col[(c*9 + (dy+1)*3 + (dx+1)), y*W + x] = in[c, y+dy, x+dx], zero outside the image.
void im2col(const double *in, const Planes &p, double *col)
{
    const std::size_t H = p.height;
    const std::size_t W = p.width;
    for (std::size_t c = 0; c < p.channels; ++c) {
        const double *src = in + c * H * W;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                double *row = col + ((c * 3 + static_cast<std::size_t>(dy + 1)) * 3 + static_cast<std::size_t>(dx + 1)) * H * W;
                for (std::size_t y = 0; y < H; ++y) {
                    double *r = row + y * W;
                    const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(r, r + W, 0.0);
                        continue;
                    }
                    const double *s = src + static_cast<std::size_t>(sy) * W;
                    if (dx == 0) {
                        std::copy(s, s + W, r);
                    } else if (dx < 0) {
                        r[0] = 0.0;
                        std::copy(s, s + W - 1, r + 1);
                    } else {
                        std::copy(s + 1, s + W, r);
                        r[W - 1] = 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulate col entries back onto the pixels they were read from.
void col2im_add(const double *col, const Planes &p, double *grad_in)
{
    const std::size_t H = p.height;
    const std::size_t W = p.width;
    for (std::size_t c = 0; c < p.channels; ++c) {
        double *dst = grad_in + c * H * W;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const double *row = col + ((c * 3 + static_cast<std::size_t>(dy + 1)) * 3 + static_cast<std::size_t>(dx + 1)) * H * W;
                for (std::size_t y = 0; y < H; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
                        continue;
                    }
                    const double *r = row + y * W;
                    double *d = dst + static_cast<std::size_t>(sy) * W;
                    if (dx == 0) {
                        for (std::size_t x = 0; x < W; ++x) {
                            d[x] += r[x];
                        }
                    } else if (dx < 0) {
                        for (std::size_t x = 1; x < W; ++x) {
                            d[x - 1] += r[x];
                        }
                    } else {
                        for (std::size_t x = 0; x + 1 < W; ++x) {
                            d[x + 1] += r[x];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(Tape &tape, const Tensor &input, const Tensor &kernels, const Tensor &bias)
{
    const auto p = planes_of(input, "conv2d");
    const auto &ks = kernels.shape();
    if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3) {
        throw ShapeError("conv2d: kernels must be [C_out,C_in,3,3], got " + shape_to_string(ks));
    }
    if (ks[1] != p.channels) {
        throw ShapeError("conv2d: kernel C_in (dimension 1) is " + std::to_string(ks[1]) + " but input has "
                         + std::to_string(p.channels) + " channels");
    }
    const std::size_t c_out = ks[0];
    if (bias.rank() != 1 || bias.dim(0) != c_out) {
        throw ShapeError("conv2d: bias must be [" + std::to_string(c_out) + "], got " + shape_to_string(bias.shape()));
    }
    if (p.height == 0 || p.width == 0) {
        throw ShapeError("conv2d: empty spatial dimensions in " + shape_to_string(input.shape()));
    }
    blas_single_thread();

    const std::size_t plane = p.height * p.width;
    const std::size_t taps = p.channels * 9;

    auto out = Tensor::zeros(image_shape(p, c_out, p.height, p.width));
    {
        auto o = out.data();
        const auto in = input.data();
        const auto b = bias.data();
        std::vector<double> col(taps * plane);
        for (std::size_t n = 0; n < p.batch; ++n) {
            im2col(in.data() + n * p.channels * plane, p, col.data());
            double *dst = o.data() + n * c_out * plane;
            for (std::size_t oc = 0; oc < c_out; ++oc) {
                std::fill(dst + oc * plane, dst + (oc + 1) * plane, b[oc]);
            }
            gemm(false, false, c_out, plane, taps, kernels.data().data(), col.data(), 1.0, dst);
        }
    }

    if (tape.tracks({&input, &kernels, &bias})) {
        tape.record(out, [input, kernels, bias, out, p, c_out]() {
            const std::size_t plane = p.height * p.width;
            const std::size_t taps = p.channels * 9;
            const auto g = out.grad();

            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t n = 0; n < p.batch; ++n) {
                    for (std::size_t oc = 0; oc < c_out; ++oc) {
                        const double *go = g.data() + (n * c_out + oc) * plane;
                        double s = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) {
                            s += go[i];
                        }
                        gb[oc] += s;
                    }
                }
            }
            if (!kernels.requires_grad() && !input.requires_grad()) {
                return;
            }
            std::vector<double> col(taps * plane);
            for (std::size_t n = 0; n < p.batch; ++n) {
                const double *go = g.data() + n * c_out * plane;
                if (kernels.requires_grad()) {
                    im2col(input.data().data() + n * p.channels * plane, p, col.data());
                    // dK[c_out, taps] += G[c_out, plane] * col[taps, plane]^T
                    gemm(false, true, c_out, taps, plane, go, col.data(), 1.0, kernels.grad().data());
                }
                if (input.requires_grad()) {
                    // dcol[taps, plane] = K[c_out, taps]^T * G[c_out, plane]
                    gemm(true, false, taps, plane, c_out, kernels.data().data(), go, 0.0, col.data());
                    col2im_add(col.data(), p, input.grad().data() + n * p.channels * plane);
                }
            }
        });
    }
    return out;
}

Tensor maxpool2d(Tape &tape, const Tensor &input)
{
    const auto p = planes_of(input, "maxpool2d");
    if (p.height == 0 || p.width == 0) {
        throw ShapeError("maxpool2d: empty spatial dimensions in " + shape_to_string(input.shape()));
    }
    const std::size_t H = p.height;
    const std::size_t W = p.width;
    const std::size_t oh = (H + 1) / 2;
    const std::size_t ow = (W + 1) / 2;
    const std::size_t planes = p.batch * p.channels;

    auto out = Tensor::zeros(image_shape(p, p.channels, oh, ow));
    std::vector<std::size_t> argmax(out.numel());
    {
        const auto in = input.data();
        auto o = out.data();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const double *src = in.data() + pl * H * W;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    std::size_t best = (2 * y) * W + 2 * x;
                    for (std::size_t wy = 2 * y; wy < std::min(H, 2 * y + 2); ++wy) {
                        for (std::size_t wx = 2 * x; wx < std::min(W, 2 * x + 2); ++wx) {
                            if (src[wy * W + wx] > src[best]) {
                                best = wy * W + wx;
                            }
                        }
                    }
                    const std::size_t oi = (pl * oh + y) * ow + x;
                    o[oi] = src[best];
                    argmax[oi] = pl * H * W + best;
                }
            }
        }
    }
    if (tape.tracks({&input})) {
        tape.record(out, [input, out, argmax = std::move(argmax)]() mutable {
            auto gi = input.grad();
            const auto g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gi[argmax[i]] += g[i];
            }
        });
    }
    return out;
}

Tensor dense(Tape &tape, const Tensor &input, const Tensor &weights, const Tensor &bias)
{
    const auto &is = input.shape();
    if (is.empty() || is.size() > 2) {
        throw ShapeError("dense: input must be [n] or [N,n], got " + shape_to_string(is));
    }
    const bool batched = is.size() == 2;
    const std::size_t rows = batched ? is[0] : 1;
    const std::size_t n = is.back();
    if (weights.rank() != 2) {
        throw ShapeError("dense: weights must be [m,n], got " + shape_to_string(weights.shape()));
    }
    const std::size_t m = weights.dim(0);
    if (weights.dim(1) != n) {
        throw ShapeError("dense: weights dimension 1 is " + std::to_string(weights.dim(1)) + " but input has "
                         + std::to_string(n) + " features");
    }
    if (bias.rank() != 1 || bias.dim(0) != m) {
        throw ShapeError("dense: bias must be [" + std::to_string(m) + "], got " + shape_to_string(bias.shape()));
    }

    auto out = Tensor::zeros(batched ? Shape{rows, m} : Shape{m});
    {
        const auto x = input.data();
        const auto w = weights.data();
        const auto b = bias.data();
        auto o = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double *xr = x.data() + r * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double *wi = w.data() + i * n;
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    s += wi[j] * xr[j];
                }
                o[r * m + i] = s + b[i];
            }
        }
    }
    if (tape.tracks({&input, &weights, &bias})) {
        tape.record(out, [input, weights, bias, out, rows, n, m]() mutable {
            const auto g = out.grad();
            const auto x = input.data();
            const auto w = weights.data();
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t i = 0; i < m; ++i) {
                        gb[i] += g[r * m + i];
                    }
                }
            }
            if (weights.requires_grad()) {
                auto gw = weights.grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double *xr = x.data() + r * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double gi = g[r * m + i];
                        if (gi == 0.0) {
                            continue;
                        }
                        double *gwi = gw.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            gwi[j] += gi * xr[j];
                        }
                    }
                }
            }
            if (input.requires_grad()) {
                auto gx = input.grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    double *gxr = gx.data() + r * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double gi = g[r * m + i];
                        if (gi == 0.0) {
                            continue;
                        }
                        const double *wi = w.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            gxr[j] += gi * wi[j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor activation(Tape &tape, const Tensor &input, Activation kind)
{
    auto out = Tensor::zeros(input.shape());
    {
        const auto x = input.data();
        auto y = out.data();
        switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < x.size(); ++i) {
                y[i] = x[i] > 0.0 ? x[i] : 0.0;
            }
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) {
                // Branch keeps exp() from overflowing for large |x|.
                if (x[i] >= 0.0) {
                    y[i] = 1.0 / (1.0 + std::exp(-x[i]));
                } else {
                    const double e = std::exp(x[i]);
                    y[i] = e / (1.0 + e);
                }
            }
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < x.size(); ++i) {
                y[i] = std::tanh(x[i]);
            }
            break;
        }
    }
    if (tape.tracks({&input})) {
        tape.record(out, [input, out, kind]() mutable {
            const auto g = out.grad();
            const auto y = out.data();
            const auto x = input.data();
            auto gx = input.grad();
            switch (kind) {
            case Activation::relu:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += x[i] > 0.0 ? g[i] : 0.0;
                }
                break;
            case Activation::sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
                break;
            case Activation::tanh:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * (1.0 - y[i] * y[i]);
                }
                break;
            }
        });
    }
    return out;
}

Tensor reshape(Tape &tape, const Tensor &input, Shape shape)
{
    auto out = input.reshaped(std::move(shape));
    if (tape.tracks({&input})) {
        tape.record(out, [input, out]() mutable {
            const auto g = out.grad();
            auto gx = input.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor flatten(Tape &tape, const Tensor &input)
{
    if (input.rank() < 2) {
        throw ShapeError("flatten: need rank >= 2, got " + shape_to_string(input.shape()));
    }
    const std::size_t rows = input.dim(0);
    return reshape(tape, input, {rows, input.numel() / rows});
}

Tensor add(Tape &tape, const Tensor &a, const Tensor &b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
    }
    auto out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a[i] + b[i];
    }
    if (tape.tracks({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            const auto g = out.grad();
            for (const Tensor *t : {&a, &b}) {
                if (t->requires_grad()) {
                    auto gt = t->grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        gt[i] += g[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor mul(Tape &tape, const Tensor &a, const Tensor &b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
    }
    auto out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a[i] * b[i];
    }
    if (tape.tracks({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b[i];
                }
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[i] += g[i] * a[i];
                }
            }
        });
    }
    return out;
}

Tensor scale(Tape &tape, const Tensor &a, double factor)
{
    auto out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a[i] * factor;
    }
    if (tape.tracks({&a})) {
        tape.record(out, [a, out, factor]() mutable {
            const auto g = out.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * factor;
            }
        });
    }
    return out;
}

Tensor sum(Tape &tape, const Tensor &a)
{
    double s = 0.0;
    for (double v : a.data()) {
        s += v;
    }
    auto out = Tensor::scalar(s);
    if (tape.tracks({&a})) {
        tape.record(out, [a, out]() mutable {
            const double g = out.grad()[0];
            for (double &v : a.grad()) {
                v += g;
            }
        });
    }
    return out;
}

Tensor mean(Tape &tape, const Tensor &a)
{
    if (a.numel() == 0) {
        throw ShapeError("mean of an empty tensor");
    }
    return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.numel()));
}

Tensor max_all(Tape &tape, const Tensor &a)
{
    if (a.numel() == 0) {
        throw ShapeError("max of an empty tensor");
    }
    const auto d = a.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
        if (d[i] > d[best]) {
            best = i;
        }
    }
    auto out = Tensor::scalar(d[best]);
    if (tape.tracks({&a})) {
        tape.record(out, [a, out, best]() mutable { a.grad()[best] += out.grad()[0]; });
    }
    return out;
}

Tensor slice_rows(Tape &tape, const Tensor &a, std::size_t begin, std::size_t end)
{
    if (a.rank() == 0 || begin > end || end > a.dim(0)) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end)
                         + ") invalid for shape " + shape_to_string(a.shape()));
    }
    const std::size_t row = a.numel() / a.dim(0);
    Shape s = a.shape();
    s[0] = end - begin;
    std::vector<double> v(a.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * row));
    auto out = Tensor::from(std::move(s), std::move(v));
    if (tape.tracks({&a})) {
        tape.record(out, [a, out, begin, row]() mutable {
            const auto g = out.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[begin * row + i] += g[i];
            }
        });
    }
    return out;
}

Tensor bce_loss(Tape &tape, std::span<const double> labels, const Tensor &predictions)
{
    if (labels.empty()) {
        throw Error("bce_loss: empty batch");
    }
    if (labels.size() != predictions.numel()) {
        throw ShapeError("bce_loss: " + std::to_string(labels.size()) + " labels but "
                         + std::to_string(predictions.numel()) + " predictions");
    }
    const auto p = predictions.data();
    const double n = static_cast<double>(labels.size());
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double q = std::clamp(p[i], bce_clamp, 1.0 - bce_clamp);
        s += labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
    }
    auto out = Tensor::scalar(-s / n);
    if (tape.tracks({&predictions})) {
        std::vector<double> y(labels.begin(), labels.end());
        tape.record(out, [predictions, out, y = std::move(y), n]() mutable {
            const double g = out.grad()[0];
            const auto p = predictions.data();
            auto gp = predictions.grad();
            for (std::size_t i = 0; i < y.size(); ++i) {
                if (p[i] < bce_clamp || p[i] > 1.0 - bce_clamp) {
                    continue;
                }
                gp[i] += g * (-(y[i] / p[i]) + (1.0 - y[i]) / (1.0 - p[i])) / n;
            }
        });
    }
    return out;
}

Tensor mse_loss(Tape &tape, const Tensor &predictions, std::span<const double> targets)
{
    if (targets.size() != predictions.numel() || targets.empty()) {
        throw ShapeError("mse_loss: " + std::to_string(targets.size()) + " targets for "
                         + std::to_string(predictions.numel()) + " predictions");
    }
    const auto p = predictions.data();
    const double n = static_cast<double>(targets.size());
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double d = p[i] - targets[i];
        s += d * d;
    }
    auto out = Tensor::scalar(s / n);
    if (tape.tracks({&predictions})) {
        std::vector<double> t(targets.begin(), targets.end());
        tape.record(out, [predictions, out, t = std::move(t), n]() mutable {
            const double g = out.grad()[0];
            const auto p = predictions.data();
            auto gp = predictions.grad();
            for (std::size_t i = 0; i < t.size(); ++i) {
                gp[i] += g * 2.0 * (p[i] - t[i]) / n;
            }
        });
    }
    return out;
}

} // namespace weakloc::ops
