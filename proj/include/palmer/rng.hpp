#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace palmer {

// Deterministic splitmix64 generator. Used everywhere instead of <random>
// so that runs are bit-identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31u);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11u) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n >= 1
    std::uint64_t uniform_index(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    // uniform integer in [lo, hi] inclusive
    long long uniform_int(long long lo, long long hi) {
        return lo + (long long)uniform_index(std::uint64_t(hi - lo + 1));
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

    // standard normal via Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * std::numbers::pi * u2);
    }

    // geometric with support {1, 2, ...}; p = 1 always yields 1
    long long geometric(double p) {
        if (p >= 1.0) return 1;
        double u = 0.0;
        while (u <= 0.0) u = uniform();
        return 1 + (long long)std::floor(std::log(u) / std::log1p(-p));
    }

    // independent stream derived from this one's seed and a stream id
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = state_ ^ (0x632be59bd9b4e019ull * (stream + 1));
        Rng r(s);
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace palmer
