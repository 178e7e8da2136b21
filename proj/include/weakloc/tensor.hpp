#ifndef WEAKLOC_TENSOR_HPP
#define WEAKLOC_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace weakloc
{

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Raised when tensor extents do not agree; the message names the offending dimension.
class ShapeError : public Error
{
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_to_string(const Shape &shape);

/// N-dimensional row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a cheap handle: copies share storage. Use clone() for a deep copy.
class Tensor
{
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }

    [[nodiscard]] const Shape &shape() const;
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const;
    [[nodiscard]] std::size_t numel() const;

    [[nodiscard]] std::span<double> data();
    [[nodiscard]] std::span<const double> data() const;

    double &operator[](std::size_t i) { return data()[i]; }
    double operator[](std::size_t i) const { return data()[i]; }

    /// Value of a single-element tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] bool requires_grad() const;
    void set_requires_grad(bool flag);

    [[nodiscard]] bool has_grad() const;
    /// Gradient buffer, allocated (zero-filled) on first access. Gradients are
    /// accumulation state, writable through const handles.
    [[nodiscard]] std::span<double> grad() const;
    void zero_grad();
    void clear_grad();

    [[nodiscard]] Tensor clone() const;
    /// Copy with a different shape of equal element count; no gradient link.
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    [[nodiscard]] bool same_storage(const Tensor &other) const noexcept { return impl_ == other.impl_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> gradient;
        bool requires_grad = false;
    };

    std::shared_ptr<Storage> impl_;

    Storage &storage() const;
};

} // namespace weakloc

#endif
