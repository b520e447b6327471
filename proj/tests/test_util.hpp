#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "btcnn/dataset.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "btcnn") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// In-memory manifest with the given class sizes, labels in blocks.
inline btcnn::Manifest manifest_with_counts(std::size_t glioma, std::size_t meningioma, std::size_t pituitary) {
    btcnn::Manifest m;
    const std::size_t counts[3] = {glioma, meningioma, pituitary};
    std::size_t id = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < counts[c]; ++k, ++id)
            m.entries.push_back({"r" + std::to_string(id), "p" + std::to_string(id / 2), static_cast<btcnn::Label>(c),
                                 "img.pgm", "mask.pgm"});
    return m;
}

} // namespace testutil
