#include <weakloc/tensor.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace weakloc
{

std::size_t shape_numel(const Shape &shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_to_string(const Shape &shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_to_string(shape) + " holds " + std::to_string(shape_numel(shape))
                         + " elements but " + std::to_string(values.size()) + " values were given");
    }
    Tensor t;
    t.impl_ = std::make_shared<Storage>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({1}, {value}, requires_grad);
}

Tensor::Storage &Tensor::storage() const
{
    if (!impl_) {
        throw Error("access to an undefined tensor");
    }
    return *impl_;
}

const Shape &Tensor::shape() const
{
    return storage().shape;
}

std::size_t Tensor::dim(std::size_t i) const
{
    const auto &s = shape();
    if (i >= s.size()) {
        throw ShapeError("dimension " + std::to_string(i) + " out of range for shape " + shape_to_string(s));
    }
    return s[i];
}

std::size_t Tensor::numel() const
{
    return storage().values.size();
}

std::span<double> Tensor::data()
{
    return storage().values;
}

std::span<const double> Tensor::data() const
{
    return storage().values;
}

double Tensor::item() const
{
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return storage().values[0];
}

bool Tensor::requires_grad() const
{
    return storage().requires_grad;
}

void Tensor::set_requires_grad(bool flag)
{
    storage().requires_grad = flag;
}

bool Tensor::has_grad() const
{
    return impl_ && !impl_->gradient.empty();
}

std::span<double> Tensor::grad() const
{
    auto &s = storage();
    if (s.gradient.empty()) {
        s.gradient.assign(s.values.size(), 0.0);
    }
    return s.gradient;
}

void Tensor::zero_grad()
{
    auto &g = storage().gradient;
    std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::clear_grad()
{
    storage().gradient.clear();
}

Tensor Tensor::clone() const
{
    const auto &s = storage();
    auto t = from(s.shape, s.values, s.requires_grad);
    t.impl_->gradient = s.gradient;
    return t;
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_to_string(this->shape()) + " to " + shape_to_string(shape));
    }
    return from(std::move(shape), storage().values, false);
}

} // namespace weakloc
