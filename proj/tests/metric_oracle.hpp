#ifndef WEAKLOC_TESTS_METRIC_ORACLE_HPP
#define WEAKLOC_TESTS_METRIC_ORACLE_HPP

#include <weakloc/geometry.hpp>
#include <weakloc/rng.hpp>

#include <cmath>
#include <numbers>
#include <set>
#include <utility>

namespace weakloc::testing
{

struct PixelSets {
    std::set<std::pair<std::size_t, std::size_t>> pred;
    std::set<std::pair<std::size_t, std::size_t>> truth;
    std::size_t inter = 0;
};

/// Pixel sets built directly from pixel centres, without Mask::rasterize.
inline PixelSets pixel_sets(const Rect &r, const Mask &m)
{
    PixelSets s;
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(m.width);
            const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(m.height);
            if (px >= r.left() && px < r.right() && py >= r.top() && py < r.bottom()) {
                s.pred.insert({y, x});
            }
            if (m.at(y, x)) {
                s.truth.insert({y, x});
            }
        }
    }
    for (const auto &p : s.pred) {
        s.inter += s.truth.count(p);
    }
    return s;
}

inline double oracle_dice(const Rect &r, const Mask &m)
{
    const auto s = pixel_sets(r, m);
    return 2.0 * static_cast<double>(s.inter) / static_cast<double>(s.pred.size() + s.truth.size());
}

inline double oracle_iou(const Rect &r, const Mask &m)
{
    const auto s = pixel_sets(r, m);
    return static_cast<double>(s.inter) / static_cast<double>(s.pred.size() + s.truth.size() - s.inter);
}

/// A random rectangle and a non-empty random mask (an ellipse, a box, or scattered pixels).
inline std::pair<Rect, Mask> random_rect_mask(Rng &rng)
{
    const std::size_t side = 8 + static_cast<std::size_t>(rng.integer(0, 40));
    Mask m(side, side);
    const auto kind = rng.integer(0, 2);
    const double cx = rng.uniform(0.2, 0.8), cy = rng.uniform(0.2, 0.8);
    const double a = rng.uniform(0.05, 0.3), b = rng.uniform(0.05, 0.3);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double px = (x + 0.5) / side - cx, py = (y + 0.5) / side - cy;
            bool on = false;
            if (kind == 0) {
                on = (px * px) / (a * a) + (py * py) / (b * b) <= 1.0;
            } else if (kind == 1) {
                on = std::abs(px) <= a && std::abs(py) <= b;
            } else {
                on = rng.bernoulli(0.15);
            }
            m.set(y, x, on);
        }
    }
    if (m.empty()) {
        m.set(side / 2, side / 2);
    }
    const double w = rng.uniform(0.02, 1.0), h = rng.uniform(0.02, 1.0);
    const Rect r{rng.uniform(0, 1), rng.uniform(0, 1), w, h};
    return {r, m};
}

/// Two-sided Student-t tail probability by Simpson integration of the density over [0, |t|].
inline double student_two_sided_p(double t, double df)
{
    const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
    auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
    const int n = 20000;
    const double hi = std::abs(t), h = hi / n;
    double s = pdf(0) + pdf(hi);
    for (int i = 1; i < n; ++i) {
        s += (i % 2 == 1 ? 4.0 : 2.0) * pdf(i * h);
    }
    return 1.0 - 2.0 * s * h / 3.0;
}

} // namespace weakloc::testing

#endif
