#pragma once

// Binary PGM ("P5") reading and writing. Samples wider than one byte are
// stored most-significant byte first, as the Netpbm format requires.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "btcnn/error.hpp"
#include "btcnn/grid.hpp"
#include "btcnn/io.hpp"

namespace btcnn::pgm {

struct Raster {
    Grid<std::uint16_t> pixels;
    std::uint32_t maxval = 0;
};

namespace detail {

class HeaderReader {
public:
    HeaderReader(const std::vector<unsigned char>& bytes, const std::string& origin)
        : bytes_(bytes), origin_(origin) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::uint32_t read_uint(const char* what) {
        skip_space_and_comments();
        std::uint64_t value = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 0xFFFFFFFFu) fail(std::string(what) + " too large");
            ++pos_;
            ++digits;
        }
        if (digits == 0) fail(std::string("expected ") + what);
        return static_cast<std::uint32_t>(value);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    void consume_single_space() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing whitespace after maxval");
        ++pos_;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw Error(ErrorCode::MalformedPgm, origin_ + ": " + why);
    }

    std::size_t pos_ = 0;

private:
    const std::vector<unsigned char>& bytes_;
    const std::string& origin_;
};

} // namespace detail

inline Raster decode(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
    detail::HeaderReader in(bytes, origin);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') in.fail("not a binary PGM (P5) file");
    in.pos_ = 2;
    const auto width = in.read_uint("width");
    const auto height = in.read_uint("height");
    const auto maxval = in.read_uint("maxval");
    if (width == 0 || height == 0) in.fail("zero image dimension");
    if (maxval == 0 || maxval > 65535) in.fail("maxval must be in [1, 65535]");
    in.consume_single_space();

    const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
    const std::size_t count = std::size_t{width} * height;
    if (bytes.size() - in.pos_ < count * bytes_per_sample) in.fail("raster truncated");

    Raster r{Grid<std::uint16_t>(height, width), maxval};
    const unsigned char* p = bytes.data() + in.pos_;
    for (std::size_t n = 0; n < count; ++n) {
        std::uint16_t v = bytes_per_sample == 2 ? static_cast<std::uint16_t>((p[2 * n] << 8) | p[2 * n + 1]) : p[n];
        if (v > maxval) in.fail("sample exceeds maxval");
        r.pixels.values[n] = v;
    }
    return r;
}

inline std::vector<unsigned char> encode(const Grid<std::uint16_t>& pixels, std::uint32_t maxval) {
    const std::string header =
        "P5\n" + std::to_string(pixels.cols) + " " + std::to_string(pixels.rows) + "\n" + std::to_string(maxval) + "\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    const bool wide = maxval > 255;
    out.reserve(out.size() + pixels.values.size() * (wide ? 2 : 1));
    for (auto v : pixels.values) {
        if (wide) out.push_back(static_cast<unsigned char>(v >> 8));
        out.push_back(static_cast<unsigned char>(v & 0xFF));
    }
    return out;
}

inline Raster read(const std::filesystem::path& path) { return decode(io::read_bytes(path), path.string()); }

inline void write(const std::filesystem::path& path, const Grid<std::uint16_t>& pixels, std::uint32_t maxval) {
    io::write_bytes(path, encode(pixels, maxval));
}

} // namespace btcnn::pgm
