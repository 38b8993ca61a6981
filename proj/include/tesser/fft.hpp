#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

namespace detail {

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place radix-2 Cooley-Tukey over a contiguous buffer of length n (pow2).
inline void fft1d(std::complex<double>* a, std::int64_t n) {
    // Bit-reversal permutation.
    for (std::int64_t i = 1, j = 0; i < n; ++i) {
        std::int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::int64_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::int64_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::int64_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace detail

// Unnormalized 2-D DFT of a real H x W plane.
inline std::vector<std::complex<double>> fft2(const double* x, std::int64_t H, std::int64_t W) {
    require(detail::is_pow2(H) && detail::is_pow2(W),
            "fft2: dimensions must be powers of two");
    std::vector<std::complex<double>> a(static_cast<std::size_t>(H * W));
    for (std::int64_t i = 0; i < H * W; ++i) a[static_cast<std::size_t>(i)] = x[i];
    for (std::int64_t r = 0; r < H; ++r) detail::fft1d(a.data() + r * W, W);
    std::vector<std::complex<double>> col(static_cast<std::size_t>(H));
    for (std::int64_t c = 0; c < W; ++c) {
        for (std::int64_t r = 0; r < H; ++r) col[static_cast<std::size_t>(r)] = a[static_cast<std::size_t>(r * W + c)];
        detail::fft1d(col.data(), H);
        for (std::int64_t r = 0; r < H; ++r) a[static_cast<std::size_t>(r * W + c)] = col[static_cast<std::size_t>(r)];
    }
    return a;
}

// Centered power spectrum |F|^2 with the DC bin moved to (H/2, W/2).
// Unnormalized DFT, so Parseval reads: sum(power) == H*W * sum(x^2).
inline Tensor fft2_power(const Tensor& image) {
    require(image.rank() == 2, "fft2_power: expected [H,W] tensor");
    std::int64_t H = image.dim(0), W = image.dim(1);
    require(detail::is_pow2(H) && detail::is_pow2(W),
            "fft2_power: dimensions must be powers of two");
    auto f = fft2(image.ptr(), H, W);
    Tensor out(image.shape);
    for (std::int64_t r = 0; r < H; ++r) {
        std::int64_t rc = (r + H / 2) % H;
        for (std::int64_t c = 0; c < W; ++c) {
            std::int64_t cc = (c + W / 2) % W;
            out.at2(rc, cc) = std::norm(f[static_cast<std::size_t>(r * W + c)]);
        }
    }
    return out;
}

}  // namespace tesser
