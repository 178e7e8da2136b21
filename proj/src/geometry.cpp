#include <weakloc/geometry.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace weakloc
{

bool intersects(const Rect &a, const Rect &b) noexcept
{
    // Edges recomputed from centre and extent carry round-off; touching rectangles must not count.
    constexpr double tol = 1e-9;
    const double w = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
    const double h = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
    return w > tol && h > tol;
}

std::size_t Mask::count() const
{
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Rect Mask::bounding_rect() const
{
    std::size_t x0 = width;
    std::size_t y0 = height;
    std::size_t x1 = 0;
    std::size_t y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            if (at(y, x)) {
                any = true;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
        }
    }
    if (!any) {
        throw Error("bounding_rect of an empty mask");
    }
    const auto W = static_cast<double>(width);
    const auto H = static_cast<double>(height);
    return Rect::from_edges(static_cast<double>(x0) / W, static_cast<double>(y0) / H, static_cast<double>(x1 + 1) / W,
                            static_cast<double>(y1 + 1) / H);
}

Mask Mask::rasterize(const Rect &rect, std::size_t height, std::size_t width)
{
    Mask m(height, width);
    const auto W = static_cast<double>(width);
    const auto H = static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y) {
        const double py = (static_cast<double>(y) + 0.5) / H;
        if (py < rect.top() || py >= rect.bottom()) {
            continue;
        }
        for (std::size_t x = 0; x < width; ++x) {
            const double px = (static_cast<double>(x) + 0.5) / W;
            if (px >= rect.left() && px < rect.right()) {
                m.set(y, x);
            }
        }
    }
    return m;
}

std::vector<std::uint8_t> Mask::pack() const
{
    std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != 0) {
            out[i / 8] = static_cast<std::uint8_t>(out[i / 8] | (1U << (i % 8)));
        }
    }
    return out;
}

Mask Mask::unpack(std::span<const std::uint8_t> packed, std::size_t height, std::size_t width)
{
    Mask m(height, width);
    if (packed.size() * 8 < m.bits.size()) {
        throw Error("packed mask too short for " + std::to_string(height) + "x" + std::to_string(width));
    }
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
        m.bits[i] = (packed[i / 8] >> (i % 8)) & 1U;
    }
    return m;
}

namespace
{

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

std::vector<Tap> taps(double lo_edge, double hi_edge, std::size_t extent, std::size_t side)
{
    const double a = lo_edge * static_cast<double>(extent);
    const double b = hi_edge * static_cast<double>(extent);
    const double max_pos = static_cast<double>(extent - 1);
    std::vector<Tap> out(side);
    for (std::size_t j = 0; j < side; ++j) {
        double pos;
        if (side == 1 || b - a <= 1.0) {
            pos = (a + b) / 2 - 0.5;
        } else {
            pos = a + (b - 1.0 - a) * static_cast<double>(j) / static_cast<double>(side - 1);
        }
        pos = std::clamp(pos, 0.0, max_pos);
        const double fl = std::floor(pos);
        const auto lo = static_cast<std::size_t>(fl);
        out[j] = {lo, std::min(lo + 1, extent - 1), pos - fl};
    }
    return out;
}

} // namespace

Tensor resample_region(const Tensor &image, const Rect &rect, std::size_t side)
{
    if (image.rank() != 3) {
        throw ShapeError("resample: image must be [C,H,W], got " + shape_to_string(image.shape()));
    }
    const std::size_t C = image.dim(0);
    const std::size_t H = image.dim(1);
    const std::size_t W = image.dim(2);
    if (H == 0 || W == 0 || side == 0) {
        throw ShapeError("resample: zero-area input " + shape_to_string(image.shape()));
    }
    if (!(rect.w > 0.0) || !(rect.h > 0.0) || !std::isfinite(rect.cx) || !std::isfinite(rect.cy)) {
        throw Error("resample: degenerate rectangle");
    }
    const auto xs = taps(rect.left(), rect.right(), W, side);
    const auto ys = taps(rect.top(), rect.bottom(), H, side);

    auto out = Tensor::zeros({C, side, side});
    const auto src = image.data();
    auto dst = out.data();
    for (std::size_t c = 0; c < C; ++c) {
        const double *plane = src.data() + c * H * W;
        double *o = dst.data() + c * side * side;
        for (std::size_t i = 0; i < side; ++i) {
            const auto &ty = ys[i];
            const double *r0 = plane + ty.lo * W;
            const double *r1 = plane + ty.hi * W;
            for (std::size_t j = 0; j < side; ++j) {
                const auto &tx = xs[j];
                const double top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
                const double bot = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
                o[i * side + j] = top + (bot - top) * ty.frac;
            }
        }
    }
    return out;
}

Tensor resample(const Tensor &image, std::size_t side)
{
    return resample_region(image, Rect::full(), side);
}

Tensor box_downsample(const Tensor &image, std::size_t factor)
{
    if (image.rank() != 3) {
        throw ShapeError("box_downsample expects [C,H,W], got " + shape_to_string(image.shape()));
    }
    if (factor < 1) {
        throw Error("box_downsample factor must be >= 1");
    }
    if (factor == 1) {
        return image;
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const std::size_t oh = (h + factor - 1) / factor, ow = (w + factor - 1) / factor;
    auto out = Tensor::zeros({c, oh, ow});
    const auto src = image.data();
    auto dst = out.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::size_t y1 = std::min(h, (oy + 1) * factor);
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t x1 = std::min(w, (ox + 1) * factor);
                double sum = 0.0;
                for (std::size_t y = oy * factor; y < y1; ++y) {
                    for (std::size_t x = ox * factor; x < x1; ++x) {
                        sum += src[(ch * h + y) * w + x];
                    }
                }
                dst[(ch * oh + oy) * ow + ox] = sum / static_cast<double>((y1 - oy * factor) * (x1 - ox * factor));
            }
        }
    }
    return out;
}

} // namespace weakloc
