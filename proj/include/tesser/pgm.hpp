#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

// Min-max scales a rank-2 tensor to 8 bits and writes binary PGM (P5).
// A constant image maps to mid-gray.
inline void write_pgm(const std::string& path, const Tensor& img) {
    require(img.rank() == 2, "write_pgm: expected rank-2 tensor, got " + shape_str(img));
    std::int64_t h = img.shape[0], w = img.shape[1];
    require(h > 0 && w > 0, "write_pgm: empty image");

    double lo = img.data[0], hi = img.data[0];
    for (double v : img.data) {
        require(std::isfinite(v), "write_pgm: non-finite pixel value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double span = hi - lo;

    std::vector<unsigned char> bytes(static_cast<std::size_t>(h * w));
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        double t = span > 0.0 ? (img.data[i] - lo) / span : 0.5;
        bytes[i] = static_cast<unsigned char>(std::lround(t * 255.0));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open '" + path + "' for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write_pgm: write failed for '" + path + "'");
}

// Channel-mean view of a [C,H,W] tensor, for saliency/spectrum dumps.
inline Tensor channel_mean(const Tensor& x) {
    require(x.rank() == 3, "channel_mean: expected [C,H,W], got " + shape_str(x));
    std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({h, w});
    for (std::int64_t i = 0; i < h * w; ++i) {
        double acc = 0.0;
        for (std::int64_t ch = 0; ch < c; ++ch) acc += x.data[static_cast<std::size_t>(ch * h * w + i)];
        out.data[static_cast<std::size_t>(i)] = acc / static_cast<double>(c);
    }
    return out;
}

}  // namespace tesser
