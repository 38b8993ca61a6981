#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tesser/errors.hpp"

namespace tesser {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

// Counter-based splittable generator. A (seed, stream) pair names an
// independent stream; draws hash (base, counter) so any stream can be
// reconstructed from its coordinates regardless of draw order elsewhere.
// This is what makes per-image attack randomness independent of worker
// scheduling.
class Rng {
public:
    Rng() : Rng(0, 0) {}

    Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
        base_ = detail::splitmix64(seed_ ^ detail::splitmix64(stream_ + 0x632be59bd9b4e019ULL));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Derive a child stream; children of distinct (stream, k) never collide.
    Rng split(std::uint64_t k) const {
        return Rng(base_, k);
    }

    std::uint64_t next_u64() {
        return detail::splitmix64(base_ ^ detail::splitmix64(counter_++));
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        require(lo <= hi, "Rng::uniform: lo must be <= hi");
        return lo + (hi - lo) * uniform();
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        require(n > 0, "Rng::next_below: n must be positive");
        // Rejection sampling for an unbiased draw.
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t base_ = 0;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Deterministic Fisher-Yates shuffle of indices [0, n).
template <typename IndexT>
inline void shuffle_indices(std::vector<IndexT>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace tesser
