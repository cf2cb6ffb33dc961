#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace organgen {

// Keyed, splittable random streams. Every consumer derives its own stream
// key from (seed, purpose, indices...), so retries or reordering in one
// consumer never perturb the draws of another. All generators below are
// self-contained so results are bit-identical across platforms and build
// configurations.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct StreamKey {
    std::uint64_t state = 0x6a09e667f3bcc908ULL;

    StreamKey with(std::uint64_t v) const { return {splitmix64(state ^ splitmix64(v))}; }
    StreamKey with(std::string_view s) const { return with(hash_str(s)); }

    template <class... Parts>
    static StreamKey of(Parts... parts) {
        StreamKey k;
        ((k = k.with(parts)), ...);
        return k;
    }
};

// xoshiro256++ stream seeded from a StreamKey.
class Rng {
public:
    explicit Rng(StreamKey key) {
        std::uint64_t s = key.state;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }

    template <class... Parts>
    static Rng of(Parts... parts) {
        return Rng(StreamKey::of(parts...));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace organgen
