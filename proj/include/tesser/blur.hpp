#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

struct GaussianKernel {
    double sigma = 0.0;
    int size = 1;
    std::vector<double> weights;  // odd length, symmetric, sums to 1
};

inline GaussianKernel gaussian_kernel(double sigma, int size) {
    require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
    require(size >= 1 && size % 2 == 1, "gaussian_kernel: size must be odd and >= 1");
    GaussianKernel k;
    k.sigma = sigma;
    k.size = size;
    k.weights.resize(static_cast<std::size_t>(size));
    int r = (size - 1) / 2;
    double sum = 0.0;
    for (int j = -r; j <= r; ++j) {
        double w = std::exp(-(static_cast<double>(j) * j) / (2.0 * sigma * sigma));
        k.weights[static_cast<std::size_t>(j + r)] = w;
        sum += w;
    }
    for (double& w : k.weights) w /= sum;
    return k;
}

namespace detail {

// Mirror index without repeating the border pixel: -1 -> 1, n -> n-2.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return i;
}

}  // namespace detail

// Separable blur of one H x W plane: horizontal pass then vertical pass,
// reflect padding at the borders. tmp must hold H*W doubles.
inline void blur_plane(const double* src, double* dst, double* tmp,
                       std::int64_t H, std::int64_t W, const GaussianKernel& k) {
    int r = (k.size - 1) / 2;
    const double* w = k.weights.data();
    for (std::int64_t y = 0; y < H; ++y) {
        const double* row = src + y * W;
        double* out = tmp + y * W;
        for (std::int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j)
                acc += w[j + r] * row[detail::reflect_index(x + j, W)];
            out[x] = acc;
        }
    }
    for (std::int64_t y = 0; y < H; ++y) {
        double* out = dst + y * W;
        for (std::int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j)
                acc += w[j + r] * tmp[detail::reflect_index(y + j, H) * W + x];
            out[x] = acc;
        }
    }
}

// Adjoint of blur_plane: scatter-add through the same taps in reverse order
// (vertical transpose first, then horizontal transpose).
inline void blur_plane_adjoint(const double* grad_out, double* grad_in, double* tmp,
                               std::int64_t H, std::int64_t W, const GaussianKernel& k) {
    int r = (k.size - 1) / 2;
    const double* w = k.weights.data();
    for (std::int64_t i = 0; i < H * W; ++i) tmp[i] = 0.0;
    for (std::int64_t y = 0; y < H; ++y) {
        const double* g = grad_out + y * W;
        for (std::int64_t x = 0; x < W; ++x) {
            double gv = g[x];
            for (int j = -r; j <= r; ++j)
                tmp[detail::reflect_index(y + j, H) * W + x] += w[j + r] * gv;
        }
    }
    for (std::int64_t i = 0; i < H * W; ++i) grad_in[i] = 0.0;
    for (std::int64_t y = 0; y < H; ++y) {
        const double* g = tmp + y * W;
        double* out = grad_in + y * W;
        for (std::int64_t x = 0; x < W; ++x) {
            double gv = g[x];
            for (int j = -r; j <= r; ++j)
                out[detail::reflect_index(x + j, W)] += w[j + r] * gv;
        }
    }
}

inline Tensor blur2d(const Tensor& image, const GaussianKernel& k) {
    require(image.rank() == 3, "blur2d: expected [C,H,W] tensor");
    std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    require(H >= k.size && W >= k.size, "blur2d: image smaller than kernel");
    Tensor out(image.shape);
    std::vector<double> tmp(static_cast<std::size_t>(H * W));
    for (std::int64_t c = 0; c < C; ++c)
        blur_plane(image.ptr() + c * H * W, out.ptr() + c * H * W, tmp.data(), H, W, k);
    return out;
}

inline Tensor blur2d_backward(const Tensor& grad_out, const GaussianKernel& k) {
    require(grad_out.rank() == 3, "blur2d_backward: expected [C,H,W] tensor");
    std::int64_t C = grad_out.dim(0), H = grad_out.dim(1), W = grad_out.dim(2);
    require(H >= k.size && W >= k.size, "blur2d_backward: image smaller than kernel");
    Tensor out(grad_out.shape);
    std::vector<double> tmp(static_cast<std::size_t>(H * W));
    for (std::int64_t c = 0; c < C; ++c)
        blur_plane_adjoint(grad_out.ptr() + c * H * W, out.ptr() + c * H * W,
                           tmp.data(), H, W, k);
    return out;
}

}  // namespace tesser
