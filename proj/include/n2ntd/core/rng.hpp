#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace n2ntd {

// xoshiro256** with splitmix64 seeding. Hand-rolled so that streams are
// bit-reproducible across platforms and the full state can be checkpointed.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed)
    {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    uint64_t next_u64()
    {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform double in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive integer range
    int64_t uniform_int(int64_t lo, int64_t hi)
    {
        const uint64_t span = uint64_t(hi - lo) + 1;
        // multiply-shift bounded draw; bias < 2^-64, irrelevant here
        const unsigned __int128 m = (unsigned __int128)next_u64() * span;
        return lo + int64_t(m >> 64);
    }

    // standard normal via Box-Muller (cacheless: consumes two words per draw)
    double normal()
    {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Poisson sampling: CDF inversion below mean 10, PTRS transformed
    // rejection (Hoermann 1993) above. Exact distribution in both regimes.
    int64_t poisson(double mean)
    {
        if (mean <= 0.0) return 0;
        if (mean < 10.0) return poisson_inversion(mean);
        return poisson_ptrs(mean);
    }

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

private:
    static uint64_t splitmix64(uint64_t& x)
    {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    int64_t poisson_inversion(double mean)
    {
        const double u = uniform();
        double p = std::exp(-mean);
        double cdf = p;
        int64_t k = 0;
        while (u > cdf && k < 4096) {
            ++k;
            p *= mean / double(k);
            cdf += p;
        }
        return k;
    }

    int64_t poisson_ptrs(double mean)
    {
        const double b = 0.931 + 2.53 * std::sqrt(mean);
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double v_r = 0.9277 - 3.6224 / (b - 2.0);
        const double log_mean = std::log(mean);
        for (;;) {
            double u = uniform() - 0.5;
            double v = uniform();
            const double us = 0.5 - std::abs(u);
            const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= v_r) return int64_t(kf);
            if (kf < 0.0 || (us < 0.013 && v > us)) continue;
            const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
            const double rhs = -mean + kf * log_mean - std::lgamma(kf + 1.0);
            if (lhs <= rhs) return int64_t(kf);
        }
    }

    std::array<uint64_t, 4> s_{};
};

// Derives independent child seeds from a base seed (stack index, frame
// index, ...) without correlating the child streams.
inline uint64_t derive_seed(uint64_t base, uint64_t salt)
{
    uint64_t x = base ^ (0x9e3779b97f4a7c15ULL + (salt << 1));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace n2ntd
