#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace sketchmass {

/// 64-bit finalizer from SplitMix64.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based generator: the value at counter i depends only on the key
/// and i, so any draw can be reproduced without replaying a sequence.
/// Keys derive from (seed, shape id, stream name), which makes sampling
/// independent of worker scheduling.
class CounterRng {
public:
    constexpr explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}
    CounterRng(std::uint64_t seed, std::string_view shape_id, std::string_view stream)
        : CounterRng(mix64(seed) ^ mix64(fnv1a64(stream, fnv1a64(shape_id)) + 0x5851f42d4c957f2dULL)) {}

    /// Derived generator for a sub-stream (e.g. one training step).
    CounterRng fork(std::uint64_t index) const { return CounterRng(key_ ^ mix64(index + 0x2545f4914f6cdd1dULL)); }

    constexpr std::uint64_t bits(std::uint64_t i) const { return mix64(key_ + mix64(i)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t i) const {
        return static_cast<double>(bits(i) >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters 2i and 2i+1 of a domain
    /// disjoint from uniform().
    double normal(std::uint64_t i) const {
        constexpr std::uint64_t domain = 1ULL << 63;
        const double u1 = 1.0 - uniform(domain | (2 * i));  // (0, 1]
        const double u2 = uniform(domain | (2 * i + 1));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n) by rejection-free multiply-shift.
    std::uint64_t below(std::uint64_t i, std::uint64_t n) const {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(i)) * n) >> 64);
    }

private:
    std::uint64_t key_;
};

/// Sequential draws from a CounterRng with an internal counter.
class RngStream {
public:
    explicit RngStream(const CounterRng& rng) : rng_(rng) {}
    double uniform() { return rng_.uniform(next_++); }
    double normal() { return rng_.normal(next_++); }
    std::uint64_t below(std::uint64_t n) { return rng_.below(next_++, n); }
    std::uint64_t position() const { return next_; }

private:
    CounterRng rng_;
    std::uint64_t next_ = 0;
};

}  // namespace sketchmass
