#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "paramscope/tensor.hpp"

namespace paramscope {

/// SplitMix64 output function (Steele, Lea, Flood 2014). Used for seeding
/// and for deriving independent stream seeds.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed of stream `stream` under `seed`:
///   split(seed, stream) = mix(seed + (stream + 1) * 0x9E3779B97F4A7C15)
/// Trial seeds are split(base_seed, trial_id).
constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return splitmix64_mix(seed + (stream + 1) * 0x9E3779B97F4A7C15ULL);
}

/// xoshiro256** 1.0 (Blackman & Vigna). State is filled from successive
/// SplitMix64 outputs of the seed.
///
/// uniform() = (next() >> 11) * 2^-53, in [0, 1).
/// normal() uses Box-Muller on pairs (u1, u2) with u1 = 1 - uniform():
///   r = sqrt(-2 ln u1); first value r*cos(2 pi u2), second r*sin(2 pi u2).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9E3779B97F4A7C15ULL;
            s = splitmix64_mix(x);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, bound) by rejection on the top of the range.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return r % bound;
    }

    double normal() noexcept;

    /// Derive an independent generator for sub-stream `stream`.
    Rng split(std::uint64_t stream) const noexcept { return Rng(split_seed(seed_, stream)); }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    std::optional<double> spare_;
};

/// Tensor with i.i.d. N(mean, std^2) entries drawn from `rng` in row-major order.
Tensor normal_init(const Shape& shape, double mean, double std, Rng& rng);

}  // namespace paramscope
