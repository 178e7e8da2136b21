#ifndef WEAKLOC_GEOMETRY_HPP
#define WEAKLOC_GEOMETRY_HPP

#include <weakloc/tensor.hpp>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace weakloc
{

/// Axis-aligned rectangle in normalized image coordinates: centre (cx, cy) and
/// extent (w, h), all as fractions of the image side. x grows to the right, y downwards.
struct Rect {
    double cx = 0.5;
    double cy = 0.5;
    double w = 1.0;
    double h = 1.0;

    [[nodiscard]] double left() const noexcept { return cx - w / 2; }
    [[nodiscard]] double right() const noexcept { return cx + w / 2; }
    [[nodiscard]] double top() const noexcept { return cy - h / 2; }
    [[nodiscard]] double bottom() const noexcept { return cy + h / 2; }

    static Rect from_edges(double left, double top, double right, double bottom) noexcept
    {
        return {(left + right) / 2, (top + bottom) / 2, right - left, bottom - top};
    }

    static Rect full() noexcept { return {}; }

    friend bool operator==(const Rect &, const Rect &) = default;
};

/// True if the rectangles share interior area (overlap wider than 1e-9 on both axes).
bool intersects(const Rect &a, const Rect &b) noexcept;

/// Binary pixel mask, row-major.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

    [[nodiscard]] bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v = true) { bits[y * width + x] = v ? 1 : 0; }
    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] bool empty() const { return count() == 0; }

    /// Tight bounding rectangle of the set pixels, normalized to the mask grid.
    [[nodiscard]] Rect bounding_rect() const;

    /// Pixels whose centre lies inside the rectangle (closed on the low edge, open on the high edge).
    static Mask rasterize(const Rect &rect, std::size_t height, std::size_t width);

    /// Packed row-major bitmap, least significant bit first within each byte.
    [[nodiscard]] std::vector<std::uint8_t> pack() const;
    static Mask unpack(std::span<const std::uint8_t> packed, std::size_t height, std::size_t width);

    friend bool operator==(const Mask &, const Mask &) = default;
};

/// Bilinearly resample `rect` of a [C,H,W] image to [C,side,side].
///
/// Output samples span the rectangle from the first to the last pixel centre it
/// covers, so a full-image rectangle at the native size is the identity and a
/// rectangle aligned to a pixel block never reads outside that block.
Tensor resample_region(const Tensor &image, const Rect &rect, std::size_t side);

/// Whole-image resample to [C,side,side].
Tensor resample(const Tensor &image, std::size_t side);

/// Average non-overlapping factor x factor blocks of a [C,H,W] image; edge blocks
/// average the pixels they contain, so the output is [C, ceil(H/f), ceil(W/f)].
Tensor box_downsample(const Tensor &image, std::size_t factor);

} // namespace weakloc

#endif
