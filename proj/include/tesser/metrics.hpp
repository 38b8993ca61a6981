#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/fft.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

struct SpectralReport {
    double hfer = 0.0;                // fraction of energy outside the low band
    int radius = 0;                   // low-band radius in bins
    std::vector<double> per_channel;  // hfer per channel before averaging
    bool degenerate = false;          // some channel carried no energy at all
};

// Fraction of spectral energy outside the centered disk of the given radius
// (DC sits at the disk center and is always inside). Energy is squared
// magnitude; log_magnitude swaps in log(1 + |F|) per bin for comparison runs.
inline SpectralReport hfer(const Tensor& delta, int radius, bool log_magnitude = false) {
    require(delta.rank() == 3, "hfer: expected [C,H,W], got " + shape_str(delta));
    std::int64_t C = delta.dim(0), H = delta.dim(1), W = delta.dim(2);
    require(radius >= 0, "hfer: radius must be non-negative");
    SpectralReport rep;
    rep.radius = radius;
    double rsq = static_cast<double>(radius) * static_cast<double>(radius);
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
        Tensor plane({H, W});
        std::copy(delta.ptr() + c * H * W, delta.ptr() + (c + 1) * H * W, plane.ptr());
        Tensor power = fft2_power(plane);
        double total = 0.0, low = 0.0;
        for (std::int64_t r = 0; r < H; ++r)
            for (std::int64_t w = 0; w < W; ++w) {
                double e = power.at2(r, w);
                if (log_magnitude) e = std::log1p(std::sqrt(e));
                total += e;
                double dy = static_cast<double>(r - H / 2);
                double dx = static_cast<double>(w - W / 2);
                if (dy * dy + dx * dx <= rsq) low += e;
            }
        double ratio = 0.0;
        if (total > 0.0)
            ratio = (total - low) / total;
        else
            rep.degenerate = true;
        rep.per_channel.push_back(ratio);
        sum += ratio;
    }
    rep.hfer = sum / static_cast<double>(C);
    return rep;
}

inline SpectralReport hfer(const Tensor& delta) {
    require(delta.rank() == 3, "hfer: expected [C,H,W], got " + shape_str(delta));
    return hfer(delta, static_cast<int>(delta.dim(1) / 4));
}

// 20*log10(1/sqrt(MSE)) for images on the [0,1] scale; equal inputs report
// the +infinity sentinel.
inline double psnr(const Tensor& a, const Tensor& b) {
    require(a.shape == b.shape, "psnr: shape mismatch, " + shape_str(a) + " vs " + shape_str(b));
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

namespace detail {

inline double ssim_plane(const double* a, const double* b, std::int64_t H, std::int64_t W) {
    constexpr std::int64_t win = 8, stride = 4;
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y + win <= H; y += stride)
        for (std::int64_t x = 0; x + win <= W; x += stride) {
            double ma = 0.0, mb = 0.0;
            for (std::int64_t i = 0; i < win; ++i)
                for (std::int64_t j = 0; j < win; ++j) {
                    ma += a[(y + i) * W + x + j];
                    mb += b[(y + i) * W + x + j];
                }
            double n = static_cast<double>(win * win);
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (std::int64_t i = 0; i < win; ++i)
                for (std::int64_t j = 0; j < win; ++j) {
                    double da = a[(y + i) * W + x + j] - ma;
                    double db = b[(y + i) * W + x + j] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            sum += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) /
                   ((ma * ma + mb * mb + C1) * (va + vb + C2));
            ++count;
        }
    return sum / static_cast<double>(count);
}

}  // namespace detail

// Mean windowed SSIM, 8x8 windows on a stride-4 grid, channel-averaged.
inline double ssim(const Tensor& a, const Tensor& b) {
    require(a.shape == b.shape, "ssim: shape mismatch, " + shape_str(a) + " vs " + shape_str(b));
    require(a.rank() == 2 || a.rank() == 3, "ssim: expected [H,W] or [C,H,W]");
    std::int64_t C = a.rank() == 3 ? a.dim(0) : 1;
    std::int64_t H = a.dim(a.rank() - 2), W = a.dim(a.rank() - 1);
    require(H >= 8 && W >= 8, "ssim: image smaller than the 8x8 window");
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c)
        sum += detail::ssim_plane(a.ptr() + c * H * W, b.ptr() + c * H * W, H, W);
    return sum / static_cast<double>(C);
}

// Smallest 1-indexed t with labels[t] != y and a constant suffix from t on;
// nullopt when the final prediction never settles off the true label.
inline std::optional<int> stabilization_iteration(const std::vector<int>& labels, int y) {
    require(!labels.empty(), "stabilization_iteration: empty trace");
    int last = labels.back();
    if (last == y) return std::nullopt;
    std::size_t t = labels.size() - 1;
    while (t > 0 && labels[t - 1] == last) --t;
    return static_cast<int>(t) + 1;
}

struct CosineAlignment {
    double value = 0.0;
    bool degenerate = false;  // a zero vector made the cosine undefined
};

inline CosineAlignment cosine_alignment(const Tensor& g, const Tensor& g_prime) {
    require(g.shape == g_prime.shape,
            "cosine_alignment: shape mismatch, " + shape_str(g) + " vs " + shape_str(g_prime));
    double na = l2_norm(g), nb = l2_norm(g_prime);
    CosineAlignment out;
    if (na == 0.0 || nb == 0.0) {
        out.degenerate = true;
        return out;
    }
    out.value = dot(g, g_prime) / (na * nb);
    return out;
}

}  // namespace tesser
