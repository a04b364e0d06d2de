#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tc3d {

using Shape = std::vector<std::size_t>;

// Thrown whenever two tensor shapes cannot be combined. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_volume(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] inline void throw_shape_error(const std::string& what, const Shape& a, const Shape& b)
{
    throw ShapeError(what + ": " + shape_str(a) + " vs " + shape_str(b));
}

/// Dense row-major fp64 tensor. A value type: copies are deep.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill)
    {
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_volume(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor vector(std::vector<double> values)
    {
        Shape s{values.size()};
        return Tensor(std::move(s), std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Element access for rank-4 [C, D, H, W] tensors.
    double& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w)
    {
        return data_[((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const
    {
        return data_[((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const
    {
        if (shape_volume(shape) != data_.size()) throw_shape_error("reshape", shape_, shape);
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const
    {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& other)
    {
        if (other.shape_ != shape_) throw_shape_error("tensor add", shape_, other.shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Tensor& operator*=(double s)
    {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) throw_shape_error("dot", a.shape(), b.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) throw_shape_error("max_abs_diff", a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace tc3d
