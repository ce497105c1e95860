#ifndef DKPS_RNG_HPP
#define DKPS_RNG_HPP

// Counter-based random streams. A stream is addressed by a key built from the
// run seed and the coordinates of whatever it feeds (model, query, replicate,
// trial...), so a draw never depends on the order in which streams are used.
// Only integer arithmetic and libm are involved, so results do not depend on
// the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace dkps::rng {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t key(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept {
    std::uint64_t h = mix(seed);
    for (std::uint64_t c : coords)
        h = mix(h ^ mix(c + 0x632be59bd9b4e019ULL));
    return h;
}

/// Stream tags keep different kinds of draws apart under the same seed.
enum Tag : std::uint64_t {
    kLatent = 1,
    kQueryMap = 2,
    kLeakMap = 3,
    kOffset = 4,
    kResponse = 5,
    kLabel = 6,
    kTrial = 7,
    kSubsample = 8,
    kSplit = 9,
};

class Stream {
public:
    explicit Stream(std::uint64_t key) noexcept : state_(key) {}

    std::uint64_t next() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Standard normal by Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform integer in [0, bound) without modulo bias.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % bound;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % bound;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dkps::rng

#endif
