#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "ndmd/errors.hpp"

namespace ndmd {

/// Derives independent 64-bit stream seeds from (seed, tag) pairs.
/// splitmix64 finalizer; stable across platforms.
inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic RNG. All transforms are hand-rolled on top of
/// std::mt19937_64 so that streams are bit-identical across standard
/// library implementations (std::*_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller. The spare value is discarded so the
    /// stream position is a pure function of the call count.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    /// Uniform integer in [0, n).
    int below(int n) {
        require(n > 0, "Rng::below: n must be positive");
        // rejection sampling keeps the draw exactly uniform
        std::uint64_t un = std::uint64_t(n);
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / un * un;
        std::uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return int(x % un);
    }

    /// Sample k distinct integers from [0, n), ascending order.
    std::vector<int> sample_without_replacement(int n, int k) {
        require(k >= 0 && k <= n, "sample_without_replacement: need 0 <= k <= n");
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
            int j = i + below(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace ndmd
