#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace btcnn {

/// SplitMix64 step (Steele, Lea, Flood). Used only to expand a user seed
/// into a non-zero xorshift state and to derive independent sub-streams.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xorshift64* generator: shifts (12, 25, 27), multiplier 0x2545F4914F6CDD1D.
///
/// Every random decision in the pipeline (splits, minibatch order, weight
/// init, phantom synthesis) draws from this generator through the helpers
/// below, so results never depend on the standard library's distribution
/// implementations.
class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        state_ = splitmix64(sm);
        if (state_ == 0) state_ = 0x2545F4914F6CDD1DULL;
    }

    std::uint64_t next() noexcept {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t r = next();
        while (r >= limit) r = next();
        return r % bound;
    }

    /// Standard normal via Box-Muller; each call consumes two uniforms.
    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Fisher-Yates, walking from the back.
    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

/// Derives a seed for an independent stream from a base seed and a tag.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept {
    std::uint64_t s = base ^ (tag * 0xD1B54A32D192ED03ULL);
    return splitmix64(s);
}

} // namespace btcnn
