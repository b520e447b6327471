#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "btcnn/preprocess.hpp"
#include "btcnn/rng.hpp"

using namespace btcnn;

namespace {

Mask mask_from(std::size_t rows, std::size_t cols, std::initializer_list<std::pair<std::size_t, std::size_t>> on) {
    Mask m(rows, cols, 0);
    for (auto [i, j] : on) m(i, j) = 1;
    return m;
}

ImageF random_image(Xorshift64Star& rng, std::size_t rows, std::size_t cols, double lo = -5, double hi = 50) {
    ImageF img(rows, cols);
    for (auto& v : img.values) v = rng.uniform(lo, hi);
    return img;
}

// Four-weight bilinear blend, written out independently of the library.
double bilinear_oracle(const ImageF& src, std::size_t n, std::size_t i, std::size_t j) {
    auto coord = [](std::size_t d, std::size_t len, std::size_t out) {
        double s = (d + 0.5) * double(len) / double(out) - 0.5;
        return std::min(std::max(s, 0.0), double(len - 1));
    };
    const double y = coord(i, src.rows, n), x = coord(j, src.cols, n);
    const std::size_t y0 = std::size_t(y), x0 = std::size_t(x);
    const std::size_t y1 = std::min(y0 + 1, src.rows - 1), x1 = std::min(x0 + 1, src.cols - 1);
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * (1 - fx) * src(y0, x0) + (1 - fy) * fx * src(y0, x1) + fy * (1 - fx) * src(y1, x0) +
           fy * fx * src(y1, x1);
}

DatasetRecord record_with_bbox(std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    Xorshift64Star rng(17);
    DatasetRecord r{"x", "p", Label::Glioma, ImageU16(48, 40), Mask(48, 40, 0)};
    for (auto& v : r.image.values) v = static_cast<std::uint16_t>(rng.below(4096));
    // Lesion pixels on the bbox border only at a few places, plus a filled interior blob.
    for (std::size_t i = top; i < top + h; ++i)
        for (std::size_t j = left; j < left + w; ++j)
            if ((i + j) % 3 != 0) r.mask(i, j) = 1;
    r.mask(top, left + 1) = 1;
    r.mask(top + h - 1, left + 1) = 1;
    r.mask(top + 1, left) = 1;
    r.mask(top + 1, left + w - 1) = 1;
    return r;
}

} // namespace

TEST(MaskBbox, Examples) {
    EXPECT_EQ(mask_bbox(mask_from(10, 10, {{5, 7}})), (Rect{5, 5, 7, 7}));
    EXPECT_EQ(mask_bbox(mask_from(10, 10, {{2, 3}, {6, 1}})), (Rect{2, 6, 1, 3}));
    try {
        mask_bbox(Mask(4, 4, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyMask);
    }
}

TEST(MaskBbox, MinimalOnRandomMasks) {
    Xorshift64Star rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Mask m(1 + rng.below(20), 1 + rng.below(20), 0);
        const auto on = 1 + rng.below(6);
        for (std::size_t k = 0; k < on; ++k) m(rng.below(m.rows), rng.below(m.cols)) = 1;
        const Rect r = mask_bbox(m);
        bool top = false, bottom = false, left = false, right = false;
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) {
                if (!m(i, j)) continue;
                EXPECT_TRUE(i >= r.row_min && i <= r.row_max && j >= r.col_min && j <= r.col_max);
                top |= i == r.row_min;
                bottom |= i == r.row_max;
                left |= j == r.col_min;
                right |= j == r.col_max;
            }
        EXPECT_TRUE(top && bottom && left && right);
    }
}

TEST(Crop, Examples) {
    const ImageF img(2, 2, {9, 8, 7, 6});
    EXPECT_EQ(crop(img, Rect{0, 1, 0, 1}), img);
    EXPECT_EQ(crop(img, Rect{0, 0, 0, 0}), ImageF(1, 1, {9}));
    EXPECT_EQ(crop(img, Rect{0, 1, 1, 1}), ImageF(2, 1, {8, 6}));
    try {
        crop(img, Rect{0, 2, 0, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
    }
}

TEST(ApplyMask, Examples) {
    const ImageF five(4, 4, 5.0);
    EXPECT_EQ(apply_mask(five, Mask(4, 4, 1)), five);
    EXPECT_EQ(apply_mask(five, Mask(4, 4, 0)), ImageF(4, 4, 0.0));
    Mask checker(4, 4, 0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) checker(i, j) = (i + j) % 2;
    const auto out = apply_mask(five, checker);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(i, j), (i + j) % 2 ? 5.0 : 0.0);
    try {
        apply_mask(five, Mask(3, 4, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(ResizeBilinear, HandEvaluatedRow) {
    // Columns map to source x = -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1).
    const auto out = resize_bilinear(ImageF(2, 2, {0, 1, 0, 1}), 4);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(out(i, 0), 0.0);
        EXPECT_DOUBLE_EQ(out(i, 1), 0.25);
        EXPECT_DOUBLE_EQ(out(i, 2), 0.75);
        EXPECT_DOUBLE_EQ(out(i, 3), 1.0);
    }
}

TEST(ResizeBilinear, ConstantsPreservedExactly) {
    for (std::size_t src : {1u, 3u, 17u, 100u})
        for (std::size_t n : {1u, 4u, 32u, 128u}) {
            const auto out = resize_bilinear(ImageF(src, src + 2, 0.3), n);
            ASSERT_EQ(out.rows, n);
            for (double v : out.values) EXPECT_EQ(v, 0.3);
        }
}

TEST(ResizeBilinear, IdentitySize) {
    Xorshift64Star rng(11);
    const auto img = random_image(rng, 32, 32);
    const auto out = resize_bilinear(img, 32);
    for (std::size_t k = 0; k < img.values.size(); ++k) EXPECT_NEAR(out.values[k], img.values[k], 1e-12);
}

TEST(ResizeBilinear, MatchesFourWeightOracleAndStaysInRange) {
    Xorshift64Star rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const auto img = random_image(rng, 1 + rng.below(70), 1 + rng.below(70));
        const std::size_t n = 1 + rng.below(130);
        const auto out = resize_bilinear(img, n);
        const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_NEAR(out(i, j), bilinear_oracle(img, n, i, j), 1e-9);
                EXPECT_GE(out(i, j), *lo);
                EXPECT_LE(out(i, j), *hi);
            }
    }
}

TEST(Normalize, Examples) {
    EXPECT_EQ(normalize(ImageF(1, 3, {10, 20, 30})), ImageF(1, 3, {0, 0.5, 1}));
    EXPECT_EQ(normalize(ImageF(2, 2, 7.0)), ImageF(2, 2, 0.0));
    Xorshift64Star rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto img = random_image(rng, 1 + rng.below(9), 2 + rng.below(9));
        img.values[0] = -10; // guarantee non-constant
        const auto out = normalize(img);
        const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
        EXPECT_EQ(*lo, 0.0);
        EXPECT_EQ(*hi, 1.0);
    }
}

TEST(Preprocess, ShapeAndRangeForEveryCell) {
    const auto rec = record_with_bbox(7, 5, 10, 20);
    for (auto v : kAllVariants)
        for (auto s : kAllInputSizes) {
            const Tensor t = preprocess(rec, v, s);
            EXPECT_EQ(t.shape(), (Shape{1, side(s), side(s)}));
            for (double x : t.data()) {
                EXPECT_GE(x, 0.0);
                EXPECT_LE(x, 1.0);
            }
        }
}

TEST(Preprocess, SegmentedIntermediateIsZeroOutsideMask) {
    auto rec = record_with_bbox(0, 0, 48, 40);
    rec.mask(0, 0) = 0; // corner excluded
    rec.mask(47, 39) = 0;
    for (auto& v : rec.image.values) v = std::max<std::uint16_t>(v, 1);
    const auto frame = variant_frame(rec, Variant::Segmented);
    const Rect box = mask_bbox(rec.mask);
    for (std::size_t i = 0; i < frame.rows; ++i)
        for (std::size_t j = 0; j < frame.cols; ++j) {
            const bool lesion = rec.mask(box.row_min + i, box.col_min + j);
            if (lesion)
                EXPECT_GT(frame(i, j), 0.0);
            else
                EXPECT_EQ(frame(i, j), 0.0);
        }
}

TEST(Preprocess, CroppedEqualsExplicitComposition) {
    const auto rec = record_with_bbox(9, 4, 10, 20);
    ASSERT_EQ(mask_bbox(rec.mask), (Rect{9, 18, 4, 23}));

    ImageF raw(48, 40);
    for (std::size_t k = 0; k < raw.values.size(); ++k) raw.values[k] = rec.image.values[k];
    ImageF window(10, 20);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 20; ++j) window(i, j) = raw(9 + i, 4 + j);
    ImageF resized(64, 64);
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) resized(i, j) = bilinear_oracle(window, 64, i, j);
    const auto [lo, hi] = std::minmax_element(resized.values.begin(), resized.values.end());

    const Tensor t = preprocess(rec, Variant::Cropped, InputSize::S64);
    ASSERT_EQ(t.shape(), (Shape{1, 64, 64}));
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(t.at(0, i, j), (resized(i, j) - *lo) / (*hi - *lo), 1e-9);
}

TEST(Preprocess, EmptyMaskOnlyForMaskedVariants) {
    DatasetRecord rec{"x", "p", Label::Glioma, ImageU16(8, 8, 3), Mask(8, 8, 0)};
    rec.image(1, 1) = 9;
    EXPECT_NO_THROW(preprocess(rec, Variant::Uncropped, InputSize::S32));
    for (auto v : {Variant::Cropped, Variant::Segmented}) {
        try {
            preprocess(rec, v, InputSize::S32);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::EmptyMask);
        }
    }
}

TEST(Preprocess, Deterministic) {
    const auto rec = record_with_bbox(3, 3, 30, 12);
    for (auto v : kAllVariants) EXPECT_EQ(preprocess(rec, v, InputSize::S128), preprocess(rec, v, InputSize::S128));
}

TEST(Enumerations, ParseRoundTrip) {
    for (auto v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_FALSE(parse_variant("mirrored"));
    for (auto s : kAllInputSizes) EXPECT_EQ(parse_input_size(static_cast<long long>(side(s))), s);
    EXPECT_FALSE(parse_input_size(48));
    for (auto s : kAllInputSizes) EXPECT_EQ(side(s) % 16, 0u);
}
