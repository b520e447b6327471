#pragma once

// Turns a dataset record into a network input: optional lesion crop or
// mask-out, bilinear resize to a square side, per-image min-max scaling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/grid.hpp"
#include "btcnn/tensor.hpp"

namespace btcnn {

enum class Variant : std::uint8_t { Uncropped, Cropped, Segmented };

inline constexpr std::array<Variant, 3> kAllVariants = {Variant::Uncropped, Variant::Cropped, Variant::Segmented};

constexpr std::string_view to_string(Variant v) noexcept {
    switch (v) {
    case Variant::Uncropped: return "uncropped";
    case Variant::Cropped: return "cropped";
    case Variant::Segmented: return "segmented";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) noexcept {
    for (auto v : kAllVariants)
        if (to_string(v) == s) return v;
    return std::nullopt;
}

enum class InputSize : std::size_t { S32 = 32, S64 = 64, S128 = 128 };

inline constexpr std::array<InputSize, 3> kAllInputSizes = {InputSize::S32, InputSize::S64, InputSize::S128};

constexpr std::size_t side(InputSize s) noexcept { return static_cast<std::size_t>(s); }

inline std::optional<InputSize> parse_input_size(long long n) noexcept {
    for (auto s : kAllInputSizes)
        if (static_cast<long long>(side(s)) == n) return s;
    return std::nullopt;
}

/// Inclusive pixel bounds.
struct Rect {
    std::size_t row_min = 0, row_max = 0, col_min = 0, col_max = 0;

    [[nodiscard]] std::size_t rows() const noexcept { return row_max - row_min + 1; }
    [[nodiscard]] std::size_t cols() const noexcept { return col_max - col_min + 1; }
    friend bool operator==(const Rect&, const Rect&) = default;
};

inline ImageF to_real(const ImageU16& img) {
    ImageF out(img.rows, img.cols);
    std::copy(img.values.begin(), img.values.end(), out.values.begin());
    return out;
}

inline Rect mask_bbox(const Mask& mask) {
    std::optional<Rect> r;
    for (std::size_t i = 0; i < mask.rows; ++i)
        for (std::size_t j = 0; j < mask.cols; ++j) {
            if (!mask(i, j)) continue;
            if (!r) {
                r = Rect{i, i, j, j};
            } else {
                r->row_max = i; // rows are visited in increasing order
                r->col_min = std::min(r->col_min, j);
                r->col_max = std::max(r->col_max, j);
            }
        }
    if (!r) throw Error(ErrorCode::EmptyMask, "mask has no lesion pixels");
    return *r;
}

inline ImageF crop(const ImageF& image, const Rect& r) {
    if (r.row_min > r.row_max || r.col_min > r.col_max || r.row_max >= image.rows || r.col_max >= image.cols)
        throw Error(ErrorCode::OutOfBounds, "rect rows [" + std::to_string(r.row_min) + "," + std::to_string(r.row_max) +
                                                "] cols [" + std::to_string(r.col_min) + "," +
                                                std::to_string(r.col_max) + "] outside " +
                                                std::to_string(image.rows) + "x" + std::to_string(image.cols));
    ImageF out(r.rows(), r.cols());
    for (std::size_t i = 0; i < out.rows; ++i)
        std::copy_n(&image(r.row_min + i, r.col_min), out.cols, &out(i, 0));
    return out;
}

inline ImageF apply_mask(const ImageF& image, const Mask& mask) {
    if (!image.same_dims(mask)) throw Error(ErrorCode::DimensionMismatch, "image and mask differ in size");
    ImageF out = image;
    for (std::size_t n = 0; n < out.values.size(); ++n)
        if (!mask.values[n]) out.values[n] = 0.0;
    return out;
}

namespace detail {

struct Tap {
    std::size_t lo, hi;
    double frac;
};

// Half-pixel centres: src = (dst + 0.5) * src_len / dst_len - 0.5, clamped.
inline Tap source_tap(std::size_t dst, std::size_t src_len, std::size_t dst_len) {
    double s = (static_cast<double>(dst) + 0.5) * (static_cast<double>(src_len) / static_cast<double>(dst_len)) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const auto hi = std::min(lo + 1, src_len - 1);
    return {lo, hi, s - static_cast<double>(lo)};
}

// a + t(b - a), clamped to the endpoints so constants stay exact and the
// result never leaves [min(a,b), max(a,b)].
inline double lerp_bounded(double a, double b, double t) {
    if (a == b) return a;
    return std::clamp(a + t * (b - a), std::min(a, b), std::max(a, b));
}

} // namespace detail

inline ImageF resize_bilinear(const ImageF& image, std::size_t n) {
    if (image.rows == 0 || image.cols == 0 || n == 0)
        throw Error(ErrorCode::ShapeMismatch, "resize needs non-empty source and target");
    std::vector<detail::Tap> cols(n);
    for (std::size_t j = 0; j < n; ++j) cols[j] = detail::source_tap(j, image.cols, n);
    ImageF out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ty = detail::source_tap(i, image.rows, n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& tx = cols[j];
            const double top = detail::lerp_bounded(image(ty.lo, tx.lo), image(ty.lo, tx.hi), tx.frac);
            const double bottom = detail::lerp_bounded(image(ty.hi, tx.lo), image(ty.hi, tx.hi), tx.frac);
            out(i, j) = detail::lerp_bounded(top, bottom, ty.frac);
        }
    }
    return out;
}

/// (x - min) / (max - min); a constant image maps to zeros.
inline ImageF normalize(const ImageF& image) {
    ImageF out(image.rows, image.cols);
    if (image.values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(image.values.begin(), image.values.end());
    const double mn = *lo, range = *hi - *lo;
    if (range == 0.0) return out;
    for (std::size_t n = 0; n < out.values.size(); ++n) out.values[n] = (image.values[n] - mn) / range;
    return out;
}

inline Tensor to_tensor(const ImageF& image) {
    return Tensor({1, image.rows, image.cols}, image.values);
}

/// The image that gets resized, before any resampling:
///   uncropped  full frame
///   cropped    bbox(mask) crop
///   segmented  bbox(mask) crop of the mask-zeroed image
inline ImageF variant_frame(const DatasetRecord& record, Variant variant) {
    ImageF image = to_real(record.image);
    switch (variant) {
    case Variant::Uncropped: return image;
    case Variant::Cropped: return crop(image, mask_bbox(record.mask));
    case Variant::Segmented: {
        const Rect box = mask_bbox(record.mask);
        return crop(apply_mask(image, record.mask), box);
    }
    }
    return image;
}

inline Tensor preprocess(const DatasetRecord& record, Variant variant, InputSize size) {
    if (!record.image.same_dims(record.mask))
        throw Error(ErrorCode::DimensionMismatch, record.record_id + ": image and mask differ in size");
    return to_tensor(normalize(resize_bilinear(variant_frame(record, variant), side(size))));
}

} // namespace btcnn
