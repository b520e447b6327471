#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "btcnn/error.hpp"

namespace btcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. The element count always equals the
/// product of the shape; reshape() is the only way to change the shape.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_size(shape_))
            throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                      " does not match shape " + shape_string(shape_));
    }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] double* raw() noexcept { return data_.data(); }
    [[nodiscard]] const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t c, std::size_t i, std::size_t j) noexcept {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const noexcept {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    void fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

    [[nodiscard]] Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw Error(ErrorCode::ShapeMismatch,
                        "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static void validate_shape(const Shape& shape) {
        for (auto d : shape)
            if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_string(shape));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_shape(const Tensor& t, const Shape& expected, std::string_view what) {
    if (t.shape() != expected)
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": expected " + shape_string(expected) +
                                                  ", got " + shape_string(t.shape()));
}

} // namespace btcnn
