#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <vector>

namespace btcnn::simd {

// Double vectors via the GCC/Clang vector extension. f64x4 lowers to one AVX
// register (or an SSE pair); f64x8 to one AVX-512 register when available.
using f64x4 = double __attribute__((vector_size(32)));
using f64x8 = double __attribute__((vector_size(64)));

// The widest type that fits one hardware register; kernels use it for their
// main loop and fall back to f64x4 and then scalars for the leftovers.
#ifdef __AVX512F__
using wide = f64x8;
#else
using wide = f64x4;
#endif

template <class V>
inline constexpr std::size_t lanes = sizeof(V) / sizeof(double);

template <class V = f64x4>
inline V load(const double* p) noexcept {
    V v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

template <class V>
inline void store(double* p, V v) noexcept {
    std::memcpy(p, &v, sizeof v);
}

template <class V>
inline double hsum(V v) noexcept {
    double s = 0.0;
    for (std::size_t l = 0; l < lanes<V>; ++l) s += v[l];
    return s;
}

// Zero-filled scratch array whose first element sits on a 64-byte boundary,
// so full-width vector accesses at multiples of 8 never split a cache line.
class AlignedBuffer {
public:
    explicit AlignedBuffer(std::size_t n) : store_(n + 8, 0.0) {
        const auto misalign = reinterpret_cast<std::uintptr_t>(store_.data()) % 64;
        data_ = store_.data() + (misalign ? (64 - misalign) / sizeof(double) : 0);
    }
    AlignedBuffer(const AlignedBuffer&) = delete;
    AlignedBuffer& operator=(const AlignedBuffer&) = delete;

    double* data() noexcept { return data_; }
    const double* data() const noexcept { return data_; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

private:
    std::vector<double> store_;
    double* data_ = nullptr;
};

} // namespace btcnn::simd
