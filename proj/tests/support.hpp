#ifndef WEAKLOC_TESTS_SUPPORT_HPP
#define WEAKLOC_TESTS_SUPPORT_HPP

#include <weakloc/ops.hpp>
#include <weakloc/rng.hpp>
#include <weakloc/tape.hpp>
#include <weakloc/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace weakloc::testing
{

inline Tensor random_tensor(Shape shape, Rng &rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false)
{
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    for (double &v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

/// Values that stay clear of relu kinks and maxpool ties under a 1e-5 perturbation.
inline Tensor separated_tensor(Shape shape, Rng &rng, bool requires_grad = true)
{
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    const auto n = t.numel();
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) {
        grid[i] = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    std::shuffle(grid.begin(), grid.end(), rng.engine());
    const double spacing = 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.data()[i] = grid[i] + rng.uniform(-0.2, 0.2) * spacing;
    }
    return t;
}

/// Scalar probe sum(out * weights); fixed random weights make every output element matter.
inline Tensor weighted_sum(Tape &tape, const Tensor &out, const Tensor &weights)
{
    return ops::sum(tape, ops::mul(tape, out, weights));
}

/// Relative error ||a - n|| / max(||a||, ||n||) between the tape gradient and central
/// differences (step h) of every input that requires a gradient.
inline double gradient_check(const std::vector<Tensor> &inputs, const std::function<Tensor(Tape &)> &loss_fn,
                             double h = 1e-5)
{
    for (Tensor t : inputs) {
        t.clear_grad();
    }
    {
        Tape tape;
        auto loss = loss_fn(tape);
        tape.backward(loss);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (Tensor t : inputs) {
        const auto analytic = std::vector<double>(t.grad().begin(), t.grad().end());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            double &x = t.data()[i];
            const double saved = x;
            x = saved + h;
            double up = 0.0, down = 0.0;
            {
                Tape tape(false);
                up = loss_fn(tape).item();
            }
            x = saved - h;
            {
                Tape tape(false);
                down = loss_fn(tape).item();
            }
            x = saved;
            const double numeric = (up - down) / (2 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
    }
    const double denom = std::sqrt(std::max(a2, n2));
    return denom == 0.0 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir
{
public:
    explicit TempDir(const std::string &tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("weakloc-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    [[nodiscard]] const std::filesystem::path &path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace weakloc::testing

#endif
