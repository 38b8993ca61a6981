#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

// Procedural 10-class dataset: 5 shapes x 2 color families, one object per
// image at jittered position/scale over a smooth textured background.
// Sample index determines the label (index % classes), so any contiguous
// range is balanced within one sample per class. Generation is keyed by
// (seed, index), independent of evaluation order.
struct DatasetSpec {
    std::uint64_t seed = 1234;
    std::int64_t count = 1024;
    int classes = 10;
    int image_side = 32;
    int channels = 3;
    double noise = 0.02;  // amplitude of per-pixel uniform noise
};

struct Sample {
    Tensor x;  // [C,H,W] in [0,1]
    int label = 0;
};

namespace detail {

inline double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Signed distances: negative inside. shape in {0..4}.
inline double shape_sdf(int shape, double dx, double dy, double r) {
    switch (shape) {
        case 0:  // disk
            return std::sqrt(dx * dx + dy * dy) - r;
        case 1:  // square
            return std::max(std::abs(dx), std::abs(dy)) - r * 0.82;
        case 2: {  // upward triangle: three outward half-planes
            // vertices at angles 90, 210, 330 degrees, circumradius r
            const double c30 = 0.86602540378443864676;
            double d1 = dy - r * 0.5;                       // bottom edge (image y grows down)
            double d2 = -c30 * dx - 0.5 * dy - r * 0.5;     // upper-left edge
            double d3 = c30 * dx - 0.5 * dy - r * 0.5;      // upper-right edge
            return std::max({d1, d2, d3});
        }
        case 3:  // diamond (L1 ball)
            return (std::abs(dx) + std::abs(dy)) - r * 1.15;
        default: {  // ring
            double rad = std::sqrt(dx * dx + dy * dy);
            return std::abs(rad - r * 0.72) - r * 0.3;
        }
    }
}

inline void class_color(int label, double jr, double jg, double jb, double* rgb) {
    // Labels k and k+5 share a shape and sit close in color space, so every
    // class has a near neighbour and decision margins stay small.
    static const double base[10][3] = {
        {0.860, 0.240, 0.200},  // disk, red A
        {0.920, 0.580, 0.120},  // square, orange A
        {0.200, 0.400, 0.860},  // triangle, blue A
        {0.160, 0.740, 0.380},  // diamond, green A
        {0.700, 0.260, 0.780},  // ring, violet A
        {0.805, 0.295, 0.255},  // disk, red B
        {0.865, 0.525, 0.175},  // square, orange B
        {0.255, 0.455, 0.805},  // triangle, blue B
        {0.215, 0.685, 0.435},  // diamond, green B
        {0.645, 0.315, 0.725},  // ring, violet B
    };
    rgb[0] = std::clamp(base[label][0] + jr, 0.0, 1.0);
    rgb[1] = std::clamp(base[label][1] + jg, 0.0, 1.0);
    rgb[2] = std::clamp(base[label][2] + jb, 0.0, 1.0);
}

}  // namespace detail

inline Sample make_sample(const DatasetSpec& spec, std::int64_t index) {
    require(index >= 0, "make_sample: index must be non-negative");
    require(spec.classes == 10 && spec.channels == 3, "make_sample: renderer is fixed at 10 classes, 3 channels");
    int S = spec.image_side;
    require(S >= 16, "make_sample: image_side too small");
    require(spec.noise >= 0.0, "make_sample: noise must be non-negative");

    Sample s;
    s.label = static_cast<int>(index % spec.classes);
    s.x = Tensor({3, S, S});
    Rng rng(spec.seed, static_cast<std::uint64_t>(index));

    // Low-frequency background: 4x4 per-channel grid, bilinear upsample.
    double grid[3][5][5];
    double bg_lo = 0.20 + 0.15 * rng.uniform();
    double bg_hi = bg_lo + 0.18 + 0.10 * rng.uniform();
    for (int c = 0; c < 3; ++c)
        for (int gy = 0; gy < 4; ++gy)
            for (int gx = 0; gx < 4; ++gx)
                grid[c][gy][gx] = bg_lo + (bg_hi - bg_lo) * rng.uniform();
    // pad edges for clean bilinear sampling
    for (int c = 0; c < 3; ++c) {
        for (int g = 0; g < 4; ++g) {
            grid[c][g][4] = grid[c][g][3];
            grid[c][4][g] = grid[c][3][g];
        }
        grid[c][4][4] = grid[c][3][3];
    }

    double cx = S / 2.0 + rng.uniform(-5.0, 5.0);
    double cy = S / 2.0 + rng.uniform(-5.0, 5.0);
    double r = rng.uniform(0.22, 0.34) * S;
    double rgb[3];
    detail::class_color(s.label, rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                        rng.uniform(-0.02, 0.02), rgb);
    int shape = s.label % 5;
    double rot = rng.uniform(-0.35, 0.35);  // small rotation, radians
    double cr = std::cos(rot), sr = std::sin(rot);

    double cell = S / 4.0;
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            double gx = (x + 0.5) / cell - 0.5;
            double gy = (y + 0.5) / cell - 0.5;
            int ix = static_cast<int>(std::floor(std::max(0.0, gx)));
            int iy = static_cast<int>(std::floor(std::max(0.0, gy)));
            ix = std::min(ix, 3);
            iy = std::min(iy, 3);
            double fx = std::clamp(gx - ix, 0.0, 1.0);
            double fy = std::clamp(gy - iy, 0.0, 1.0);

            double dx0 = x + 0.5 - cx, dy0 = y + 0.5 - cy;
            double dx = cr * dx0 + sr * dy0;
            double dy = -sr * dx0 + cr * dy0;
            double d = detail::shape_sdf(shape, dx, dy, r);
            double alpha = detail::smoothstep01(0.5 - d / 2.4);

            for (int c = 0; c < 3; ++c) {
                double b = grid[c][iy][ix] * (1 - fx) * (1 - fy) +
                           grid[c][iy][ix + 1] * fx * (1 - fy) +
                           grid[c][iy + 1][ix] * (1 - fx) * fy +
                           grid[c][iy + 1][ix + 1] * fx * fy;
                double v = b + (rgb[c] - b) * alpha;
                s.x[c * S * S + y * S + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    if (spec.noise > 0.0)
        for (double& v : s.x.data)
            v = std::clamp(v + spec.noise * rng.uniform(-1.0, 1.0), 0.0, 1.0);
    return s;
}

inline std::vector<Sample> make_dataset(const DatasetSpec& spec) {
    require(spec.count > 0, "make_dataset: count must be positive");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (std::int64_t i = 0; i < spec.count; ++i) out.push_back(make_sample(spec, i));
    return out;
}

}  // namespace tesser
