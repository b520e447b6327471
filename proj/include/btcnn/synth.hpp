#pragma once

// Procedural phantoms standing in for MRI slices. Each image is a noisy
// elliptical "head" with one circular lesion whose texture depends on the
// class:
//   glioma      bright blob peaking at the lesion centre
//   meningioma  bright ring near the lesion rim around a darker core
//   pituitary   parallel stripes at a random orientation
// The lesion disk is the mask.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/rng.hpp"

namespace btcnn {

struct SynthSpec {
    std::size_t per_class = 10;
    std::size_t side = 128;
    std::uint64_t seed = 0;
};

inline DatasetRecord synth_record(const SynthSpec& spec, Label label, std::size_t ordinal) {
    if (spec.side < 16) throw Error(ErrorCode::InvalidConfig, "phantom side must be at least 16");
    Xorshift64Star rng(derive_seed(spec.seed, 0x5EED0000ULL + ordinal));
    const auto s = static_cast<double>(spec.side);

    const double head_cy = s / 2 + rng.uniform(-0.03, 0.03) * s;
    const double head_cx = s / 2 + rng.uniform(-0.03, 0.03) * s;
    const double head_ry = rng.uniform(0.40, 0.45) * s;
    const double head_rx = rng.uniform(0.34, 0.40) * s;
    const double tissue = rng.uniform(8000.0, 11000.0);
    const double tilt = rng.uniform(-1500.0, 1500.0);

    const double r = rng.uniform(0.16, 0.23) * s;
    // Lesion centre: inside the head and at least r from the image border.
    double cy = 0, cx = 0;
    for (;;) {
        cy = rng.uniform(r + 1.0, s - r - 2.0);
        cx = rng.uniform(r + 1.0, s - r - 2.0);
        const double ey = (cy - head_cy) / head_ry, ex = (cx - head_cx) / head_rx;
        if (ey * ey + ex * ex < 0.5) break;
    }
    const double peak = rng.uniform(24000.0, 32000.0);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(0.55, 0.75) * r;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dir_y = std::sin(angle), dir_x = std::cos(angle);

    DatasetRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "case%05zu", ordinal + 1);
    rec.record_id = id;
    std::snprintf(id, sizeof id, "p%04zu", ordinal / 2 + 1);
    rec.pid = id;
    rec.label = label;
    rec.image = ImageU16(spec.side, spec.side);
    rec.mask = Mask(spec.side, spec.side);

    for (std::size_t i = 0; i < spec.side; ++i)
        for (std::size_t j = 0; j < spec.side; ++j) {
            const double y = static_cast<double>(i), x = static_cast<double>(j);
            const double ey = (y - head_cy) / head_ry, ex = (x - head_cx) / head_rx;
            const bool in_head = ey * ey + ex * ex <= 1.0;
            double v = in_head ? tissue + tilt * (y - head_cy) / head_ry + rng.normal(0.0, 700.0)
                               : 300.0 + rng.normal(0.0, 80.0);
            const double d = std::hypot(y - cy, x - cx);
            if (d <= r) {
                rec.mask(i, j) = 1;
                const double base = tissue * 0.8;
                switch (label) {
                case Label::Glioma: {
                    const double w = 0.45 * r;
                    v = base + peak * std::exp(-d * d / (2 * w * w));
                    break;
                }
                case Label::Meningioma: {
                    const double w = 0.12 * r, c = 0.72 * r;
                    v = 0.6 * base + peak * std::exp(-(d - c) * (d - c) / (2 * w * w));
                    break;
                }
                case Label::Pituitary: {
                    const double t = (y - cy) * dir_y + (x - cx) * dir_x;
                    v = base + 0.5 * peak * (1.0 + std::sin(2 * std::numbers::pi * t / period + phase));
                    break;
                }
                }
                v += rng.normal(0.0, 700.0);
            }
            rec.image(i, j) = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
        }
    return rec;
}

/// Writes <out>/index.csv, <out>/images/*.pgm and <out>/masks/*.pgm. Records
/// cycle through the classes (glioma, meningioma, pituitary, glioma, ...).
inline std::vector<ManifestEntry> synth_dataset(const std::filesystem::path& out, const SynthSpec& spec) {
    if (spec.per_class == 0) throw Error(ErrorCode::InvalidConfig, "per-class count must be at least 1");
    std::error_code ec;
    std::filesystem::create_directories(out / "images", ec);
    if (!ec) std::filesystem::create_directories(out / "masks", ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + out.string() + ": " + ec.message());

    std::vector<ManifestEntry> entries;
    for (std::size_t k = 0; k < spec.per_class * kNumClasses; ++k) {
        const auto label = static_cast<Label>(k % kNumClasses);
        const auto rec = synth_record(spec, label, k);
        ManifestEntry e{rec.record_id, rec.pid, label, "images/" + rec.record_id + ".pgm", "masks/" + rec.record_id + ".pgm"};
        write_record(out, e, rec);
        entries.push_back(std::move(e));
    }
    write_index(out, entries);
    return entries;
}

} // namespace btcnn
