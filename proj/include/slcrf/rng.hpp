#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace slcrf {

// Deterministic random stream. mt19937_64 is fully specified by the
// standard, but the <random> distributions are not, so the uniform/normal
// transforms are spelled out here. Every consumer derives its own stream
// from (seed, name) so call-site ordering elsewhere cannot perturb it.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_{seed} { seed_mt(seed); }

    Rng(std::uint64_t seed, std::string_view stream) {
        seed_mt(seed ^ fnv1a(stream));
    }

    std::uint64_t next_u64() {
        if (index_ >= kN) twist();
        std::uint64_t x = mt_[index_++];
        x ^= (x >> 29) & 0x5555555555555555ULL;
        x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
        x ^= (x << 37) & 0xFFF7EEE000000000ULL;
        x ^= x >> 43;
        return x;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; consumes exactly two words per call
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform index in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 14695981039346656037ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    static constexpr int kN = 312;
    static constexpr int kM = 156;
    static constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ULL;
    static constexpr std::uint64_t kUpperMask = 0xFFFFFFFF80000000ULL;
    static constexpr std::uint64_t kLowerMask = 0x7FFFFFFFULL;

    void seed_mt(std::uint64_t seed) {
        mt_[0] = seed;
        for (int i = 1; i < kN; ++i)
            mt_[i] = 6364136223846793005ULL * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + static_cast<std::uint64_t>(i);
        index_ = kN;
    }

    void twist() {
        for (int i = 0; i < kN; ++i) {
            std::uint64_t x = (mt_[i] & kUpperMask) | (mt_[(i + 1) % kN] & kLowerMask);
            std::uint64_t xa = x >> 1;
            if (x & 1ULL) xa ^= kMatrixA;
            mt_[i] = mt_[(i + kM) % kN] ^ xa;
        }
        index_ = 0;
    }

    std::uint64_t state_ = 0;
    std::uint64_t mt_[kN];
    int index_ = kN;
};

} // namespace slcrf
