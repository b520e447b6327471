#pragma once

// Checkpoint file layout:
//
//   "BTCNN" | 0x01 | u32 LE header length | UTF-8 JSON header | payload
//
// The payload is every parameter as a little-endian IEEE-754 double, in
// architecture order: per conv layer weights [filter][channel][row][col]
// then bias, then per dense layer weights [out][in] then bias.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/model.hpp"
#include "btcnn/io.hpp"
#include "btcnn/preprocess.hpp"

namespace btcnn {

inline constexpr std::array<unsigned char, 5> kCheckpointMagic = {'B', 'T', 'C', 'N', 'N'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointMetadata {
    std::uint32_t format_version = kCheckpointVersion;
    InputSize input_size = InputSize::S64;
    Variant variant = Variant::Cropped;
    std::vector<std::string> class_names{kLabelNames.begin(), kLabelNames.end()};
    std::vector<std::string> layer_spec;
    std::uint64_t split_seed = 0;

    friend bool operator==(const CheckpointMetadata&, const CheckpointMetadata&) = default;
};

struct Checkpoint {
    CheckpointMetadata metadata;
    std::vector<double> payload;
};

inline CheckpointMetadata make_metadata(InputSize size, Variant variant, std::uint64_t split_seed) {
    CheckpointMetadata md;
    md.input_size = size;
    md.variant = variant;
    md.split_seed = split_seed;
    for (const auto& l : build_architecture(side(size)).layers) md.layer_spec.push_back(describe(l));
    return md;
}

inline std::vector<double> flatten(const ModelParams& params) {
    std::vector<double> out;
    out.reserve(params.scalar_count());
    params.for_each_tensor([&](const Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
    return out;
}

namespace detail {

inline nlohmann::json metadata_json(const CheckpointMetadata& md, std::size_t payload_len) {
    return nlohmann::json{{"format_version", md.format_version},
                          {"input_size", side(md.input_size)},
                          {"variant", std::string(to_string(md.variant))},
                          {"class_names", md.class_names},
                          {"layer_spec", md.layer_spec},
                          {"split_seed", md.split_seed},
                          {"param_count", payload_len}};
}

inline void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(v >> (8 * b)));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
    return v;
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ModelParams& params, const CheckpointMetadata& md) {
    const auto payload = flatten(params);
    const std::string header = detail::metadata_json(md, payload.size()).dump();
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    out.push_back(kCheckpointVersion);
    const auto len = static_cast<std::uint32_t>(header.size());
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(len >> (8 * b)));
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + payload.size() * 8);
    for (double v : payload) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kCheckpointMagic.size() || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
        throw Error(ErrorCode::BadMagic, "not a checkpoint file");
    if (bytes.size() < 10) throw Error(ErrorCode::TruncatedPayload, "file ends inside the fixed header");
    if (bytes[5] != kCheckpointVersion)
        throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(bytes[5]));
    const std::uint32_t len = bytes[6] | (bytes[7] << 8) | (bytes[8] << 16) | (std::uint32_t{bytes[9]} << 24);
    if (bytes.size() - 10 < len) throw Error(ErrorCode::TruncatedPayload, "file ends inside the JSON header");

    Checkpoint ck;
    std::size_t declared = 0;
    try {
        const auto j = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + 10 + len);
        auto& md = ck.metadata;
        md.format_version = j.at("format_version").get<std::uint32_t>();
        const auto size = parse_input_size(j.at("input_size").get<long long>());
        const auto variant = parse_variant(j.at("variant").get<std::string>());
        if (!size || !variant) throw Error(ErrorCode::MalformedCheckpoint, "unknown input_size or variant");
        md.input_size = *size;
        md.variant = *variant;
        md.class_names = j.at("class_names").get<std::vector<std::string>>();
        md.layer_spec = j.at("layer_spec").get<std::vector<std::string>>();
        md.split_seed = j.at("split_seed").get<std::uint64_t>();
        declared = j.at("param_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedCheckpoint, std::string("bad JSON header: ") + e.what());
    }
    if (ck.metadata.format_version != kCheckpointVersion)
        throw Error(ErrorCode::VersionUnsupported, "header format_version " + std::to_string(ck.metadata.format_version));

    const std::size_t expected = param_count(build_architecture(side(ck.metadata.input_size)));
    if (declared != expected)
        throw Error(ErrorCode::MalformedCheckpoint, "param_count " + std::to_string(declared) +
                                                        " does not match the architecture (" +
                                                        std::to_string(expected) + ")");
    const std::size_t body = bytes.size() - 10 - len;
    if (body < expected * 8)
        throw Error(ErrorCode::TruncatedPayload,
                    "payload has " + std::to_string(body) + " bytes, expected " + std::to_string(expected * 8));
    if (body > expected * 8) throw Error(ErrorCode::MalformedCheckpoint, "trailing bytes after payload");
    ck.payload.resize(expected);
    const unsigned char* p = bytes.data() + 10 + len;
    for (std::size_t i = 0; i < expected; ++i) ck.payload[i] = std::bit_cast<double>(detail::get_u64_le(p + 8 * i));
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMetadata& md) {
    io::write_bytes(path, encode_checkpoint(params, md));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_bytes(path)); }

/// Rebuilds parameters from a checkpoint, checking it against the expected
/// architecture and class order.
inline ModelParams params_from_checkpoint(const Checkpoint& ck, std::optional<InputSize> expected_size = {}) {
    const auto& md = ck.metadata;
    if (expected_size && *expected_size != md.input_size)
        throw Error(ErrorCode::MetadataMismatch, "checkpoint input size " + std::to_string(side(md.input_size)) +
                                                     " but " + std::to_string(side(*expected_size)) + " requested");
    if (md.class_names != std::vector<std::string>(kLabelNames.begin(), kLabelNames.end()))
        throw Error(ErrorCode::MetadataMismatch, "checkpoint class order differs from glioma,meningioma,pituitary");
    ModelParams p = zero_params(build_architecture(side(md.input_size)));
    if (ck.payload.size() != p.scalar_count())
        throw Error(ErrorCode::MetadataMismatch, "payload length does not match the architecture");
    std::size_t k = 0;
    p.for_each_tensor([&](Tensor& t) {
        std::copy_n(ck.payload.begin() + static_cast<std::ptrdiff_t>(k), t.size(), t.data().begin());
        k += t.size();
    });
    return p;
}

} // namespace btcnn
