#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "bcglm/error.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// FNV-1a; only used to turn purpose tags into stream ids.
inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Philox4x32-10 (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

} // namespace detail

/// Counter-based generator: Philox4x32-10 keyed by the 64-bit seed, with a
/// 64-bit stream id in the upper half of the counter.
///
/// `substream(tag, index)` derives a fresh generator whose stream id is a hash
/// of (parent stream, tag, index); the parent is not advanced, so substreams
/// can be handed to workers in any order without changing any draw.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    SeededRng substream(std::string_view tag, std::uint64_t index = 0) const {
        std::uint64_t s = detail::splitmix64(stream_ ^ detail::hash_tag(tag));
        s = detail::splitmix64(s ^ detail::splitmix64(index + 0x632BE59BD9B4E019ULL));
        return SeededRng(seed_, s);
    }

    std::uint64_t next_u64() {
        if (cached_ == 0) refill();
        return buffer_[--cached_];
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; both variates of a pair are used.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Poisson variate: multiplication method below 10, PTRS (Hoermann 1993) above.
    std::uint64_t poisson(double lambda) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw Error(Errc::DomainError, "SeededRng::poisson", "intensity must be finite and nonnegative");
        if (lambda == 0.0) return 0;
        if (lambda < 10.0) {
            const double limit = std::exp(-lambda);
            std::uint64_t k = 0;
            double prod = uniform();
            while (prod > limit) {
                ++k;
                prod *= uniform();
            }
            return k;
        }
        const double slam = std::sqrt(lambda);
        const double loglam = std::log(lambda);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::fabs(u);
            const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
            if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
            if (k < 0.0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
                -lambda + k * loglam - std::lgamma(k + 1.0))
                return static_cast<std::uint64_t>(k);
        }
    }

private:
    void refill() {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
            static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                                  static_cast<std::uint32_t>(seed_ >> 32)};
        const auto out = detail::philox4x32(ctr, key);
        ++counter_;
        // Stored reversed because next_u64 pops from the back.
        buffer_[1] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
        buffer_[0] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
        cached_ = 2;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int cached_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Tensor draw_normal(SeededRng& rng, const Shape& shape) {
    Tensor t(shape);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

inline Tensor draw_bernoulli(SeededRng& rng, const Shape& shape, double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw Error(Errc::InvalidProbability, "draw_bernoulli", "p=" + std::to_string(p) + " outside [0,1]");
    Tensor t(shape);
    for (double& v : t.data()) v = rng.bernoulli(p) ? 1.0 : 0.0;
    return t;
}

} // namespace bcglm
