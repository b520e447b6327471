#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace btcnn {

/// Row-major 2-D array used for images and masks outside the network.
template <typename T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}
    Grid(std::size_t r, std::size_t c, std::vector<T> v) : rows(r), cols(c), values(std::move(v)) {}

    T& operator()(std::size_t i, std::size_t j) noexcept { return values[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const noexcept { return values[i * cols + j]; }

    [[nodiscard]] bool same_dims(const auto& other) const noexcept {
        return rows == other.rows && cols == other.cols;
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using ImageU16 = Grid<std::uint16_t>;
using Mask = Grid<std::uint8_t>; // 1 = lesion pixel
using ImageF = Grid<double>;

} // namespace btcnn
