#pragma once

// Portable dataset container: a directory holding index.csv plus one 16-bit
// image PGM and one 8-bit mask PGM per record.
//
//   index.csv header: record_id,pid,label,image,mask
//   label:            glioma | meningioma | pituitary
//   image / mask:     paths relative to the dataset directory

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "btcnn/error.hpp"
#include "btcnn/grid.hpp"
#include "btcnn/pgm.hpp"
#include "btcnn/rng.hpp"

namespace btcnn {

inline constexpr std::size_t kNumClasses = 3;

/// Index order is the confusion-matrix axis order.
enum class Label : std::uint8_t { Glioma = 0, Meningioma = 1, Pituitary = 2 };

inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {"glioma", "meningioma", "pituitary"};

constexpr std::size_t index_of(Label l) noexcept { return static_cast<std::size_t>(l); }
constexpr std::string_view to_string(Label l) noexcept { return kLabelNames[index_of(l)]; }

inline std::optional<Label> parse_label(std::string_view s) noexcept {
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (kLabelNames[i] == s) return static_cast<Label>(i);
    return std::nullopt;
}

using ClassCounts = std::array<std::size_t, kNumClasses>;

struct DatasetRecord {
    std::string record_id;
    std::string pid;
    Label label = Label::Glioma;
    ImageU16 image;
    Mask mask; // 1 = lesion
};

struct ManifestEntry {
    std::string record_id;
    std::string pid;
    Label label = Label::Glioma;
    std::string image; // relative to root
    std::string mask;  // relative to root
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] std::size_t size() const noexcept { return entries.size(); }
};

inline constexpr std::string_view kIndexHeader = "record_id,pid,label,image,mask";

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
}

} // namespace detail

/// Reads and validates <dir>/index.csv. Row numbers in error messages count
/// data rows from 1 (the header is not counted).
inline Manifest load_manifest(const std::filesystem::path& dir) {
    const auto index = dir / "index.csv";
    std::ifstream in(index);
    if (!in) throw Error(ErrorCode::MissingIndex, "no index.csv in " + dir.string());

    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyManifest, index.string() + " is empty");
    detail::strip_cr(line);
    if (line != kIndexHeader)
        throw Error(ErrorCode::MalformedIndex, "header must be '" + std::string(kIndexHeader) + "', got '" + line + "'");

    Manifest m{dir, {}};
    std::unordered_set<std::string> seen;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (line.empty()) continue;
        ++row;
        const auto fields = detail::split_csv_line(line);
        const auto where = "row " + std::to_string(row);
        if (fields.size() != 5) throw Error(ErrorCode::MalformedIndex, where + ": expected 5 fields");
        if (fields[0].empty()) throw Error(ErrorCode::MalformedIndex, where + ": empty record_id");
        const auto label = parse_label(fields[2]);
        if (!label) throw Error(ErrorCode::UnknownLabel, where + ": '" + fields[2] + "'");
        if (!seen.insert(fields[0]).second)
            throw Error(ErrorCode::DuplicateRecordId, where + ": '" + fields[0] + "'");
        m.entries.push_back({fields[0], fields[1], *label, fields[3], fields[4]});
    }
    if (m.entries.empty()) throw Error(ErrorCode::EmptyManifest, index.string() + " has no records");

    for (const auto& e : m.entries)
        for (const auto& rel : {e.image, e.mask})
            if (!std::filesystem::is_regular_file(dir / rel))
                throw Error(ErrorCode::MissingFile, (dir / rel).string());
    return m;
}

inline DatasetRecord load_record(const Manifest& m, const ManifestEntry& e) {
    auto image = pgm::read(m.root / e.image);
    auto mask_raster = pgm::read(m.root / e.mask);
    if (mask_raster.maxval != 255)
        throw Error(ErrorCode::MalformedPgm, (m.root / e.mask).string() + ": mask maxval must be 255");
    if (!image.pixels.same_dims(mask_raster.pixels))
        throw Error(ErrorCode::DimensionMismatch,
                    e.record_id + ": image " + std::to_string(image.pixels.rows) + "x" +
                        std::to_string(image.pixels.cols) + " vs mask " + std::to_string(mask_raster.pixels.rows) +
                        "x" + std::to_string(mask_raster.pixels.cols));
    Mask mask(mask_raster.pixels.rows, mask_raster.pixels.cols);
    for (std::size_t n = 0; n < mask.values.size(); ++n) {
        const auto v = mask_raster.pixels.values[n];
        if (v != 0 && v != 255)
            throw Error(ErrorCode::InvalidMask, e.record_id + ": mask value " + std::to_string(v) + " at pixel " +
                                                    std::to_string(n) + " (expected 0 or 255)");
        mask.values[n] = v == 255 ? 1 : 0;
    }
    return {e.record_id, e.pid, e.label, std::move(image.pixels), std::move(mask)};
}

/// Writes the record's image and mask under m.root at the entry's paths.
inline void write_record(const std::filesystem::path& root, const ManifestEntry& e, const DatasetRecord& r) {
    if (!r.image.same_dims(r.mask))
        throw Error(ErrorCode::DimensionMismatch, e.record_id + ": image and mask differ in size");
    pgm::write(root / e.image, r.image, 65535);
    Grid<std::uint16_t> mask(r.mask.rows, r.mask.cols);
    for (std::size_t n = 0; n < mask.values.size(); ++n) mask.values[n] = r.mask.values[n] ? 255 : 0;
    pgm::write(root / e.mask, mask, 255);
}

inline void write_index(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(root / "index.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (root / "index.csv").string());
    out << kIndexHeader << '\n';
    for (const auto& e : entries)
        out << e.record_id << ',' << e.pid << ',' << to_string(e.label) << ',' << e.image << ',' << e.mask << '\n';
    if (!out) throw Error(ErrorCode::IoError, "short write to index.csv");
}

enum class Partition : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

inline constexpr std::string_view to_string(Partition p) noexcept {
    switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
    }
    return "?";
}

inline std::optional<Partition> parse_partition(std::string_view s) noexcept {
    if (s == "train") return Partition::Train;
    if (s == "validation" || s == "val") return Partition::Validation;
    if (s == "test") return Partition::Test;
    return std::nullopt;
}

struct SplitRatios {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

/// Partition per manifest entry (same order as Manifest::entries).
struct SplitAssignment {
    std::uint64_t seed = 0;
    std::vector<Partition> partition;

    [[nodiscard]] std::vector<std::size_t> indices(Partition p) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < partition.size(); ++i)
            if (partition[i] == p) out.push_back(i);
        return out;
    }
};

/// Per class: shuffle that class's entries (manifest order, then a seeded
/// Fisher-Yates), give the first floor(test*n) to test, the next
/// floor(validation*n) to validation and the rest to train. One generator
/// serves all classes, visited in label order.
inline SplitAssignment stratified_split(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed) {
    if (m.entries.empty()) throw Error(ErrorCode::EmptyManifest, "cannot split an empty manifest");
    const double sum = ratios.train + ratios.validation + ratios.test;
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorCode::BadRatios, "split ratios must be non-negative and sum to 1");

    SplitAssignment split{seed, std::vector<Partition>(m.entries.size(), Partition::Train)};
    Xorshift64Star rng(seed);
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < m.entries.size(); ++i)
            if (index_of(m.entries[i].label) == cls) members.push_back(i);
        rng.shuffle(std::span<std::size_t>(members));
        // The epsilon keeps products such as 0.15 * 20 from flooring to 2.
        const auto n = static_cast<double>(members.size());
        const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
        const auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * n + 1e-9));
        for (std::size_t k = 0; k < members.size(); ++k) {
            if (k < n_test)
                split.partition[members[k]] = Partition::Test;
            else if (k < n_test + n_val)
                split.partition[members[k]] = Partition::Validation;
        }
    }
    return split;
}

inline ClassCounts class_counts(const Manifest& m) {
    ClassCounts counts{};
    for (const auto& e : m.entries) ++counts[index_of(e.label)];
    return counts;
}

inline ClassCounts class_counts(const Manifest& m, const SplitAssignment& split, Partition p) {
    ClassCounts counts{};
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        if (split.partition.at(i) == p) ++counts[index_of(m.entries[i].label)];
    return counts;
}

} // namespace btcnn
