#pragma once

#include <cstdint>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/kernels.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

struct CnnArch {
    int image_side = 32;
    int channels = 3;
    int conv1_out = 16;
    int conv2_out = 32;
    int classes = 10;

    int pooled_side() const { return image_side / 4; }
    int flat_dim() const { return conv2_out * pooled_side() * pooled_side(); }

    void validate() const {
        require(image_side > 0 && image_side % 4 == 0, "CnnArch: image_side must be divisible by 4");
        require(channels > 0 && conv1_out > 0 && conv2_out > 0 && classes > 0,
                "CnnArch: all fields must be positive");
    }

    bool operator==(const CnnArch&) const = default;
};

struct CnnParams {
    CnnArch arch;
    Tensor conv1_w, conv1_b;  // [C1,C,3,3], [C1]
    Tensor conv2_w, conv2_b;  // [C2,C1,3,3], [C2]
    Tensor fc_w, fc_b;        // [flat,K], [K]
};

template <typename P, typename F>
void cnn_for_each_tensor(P& p, F&& fn) {
    fn("conv1_w", p.conv1_w);
    fn("conv1_b", p.conv1_b);
    fn("conv2_w", p.conv2_w);
    fn("conv2_b", p.conv2_b);
    fn("fc_w", p.fc_w);
    fn("fc_b", p.fc_b);
}

inline CnnParams cnn_zero_params(const CnnArch& arch) {
    arch.validate();
    CnnParams p;
    p.arch = arch;
    p.conv1_w = Tensor({arch.conv1_out, arch.channels, 3, 3});
    p.conv1_b = Tensor({arch.conv1_out});
    p.conv2_w = Tensor({arch.conv2_out, arch.conv1_out, 3, 3});
    p.conv2_b = Tensor({arch.conv2_out});
    p.fc_w = Tensor({arch.flat_dim(), arch.classes});
    p.fc_b = Tensor({arch.classes});
    return p;
}

// He init for the convolutions; the linear head starts at zero so initial
// logits are exactly uniform.
inline CnnParams cnn_init(const CnnArch& arch, Rng rng) {
    CnnParams p = cnn_zero_params(arch);
    auto fill_normal = [&rng](Tensor& t, double std) {
        for (auto& v : t.data) v = rng.normal() * std;
    };
    fill_normal(p.conv1_w, std::sqrt(2.0 / (arch.channels * 9.0)));
    fill_normal(p.conv2_w, std::sqrt(2.0 / (arch.conv1_out * 9.0)));
    return p;
}

namespace detail {

// 3x3 convolution, stride 1, zero padding 1.
inline void conv3x3(const double* in, const double* w, const double* b, double* out,
                    std::int64_t Cin, std::int64_t Cout, std::int64_t H, std::int64_t W) {
    for (std::int64_t co = 0; co < Cout; ++co) {
        double* oplane = out + co * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) oplane[i] = b[co];
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const double* iplane = in + ci * H * W;
            const double* k = w + (co * Cin + ci) * 9;
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t dy = -1; dy <= 1; ++dy) {
                    std::int64_t sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const double* irow = iplane + sy * W;
                    double* orow = oplane + y * W;
                    const double* kr = k + (dy + 1) * 3;
                    for (std::int64_t x = 0; x < W; ++x) {
                        double acc = 0.0;
                        if (x > 0) acc += kr[0] * irow[x - 1];
                        acc += kr[1] * irow[x];
                        if (x + 1 < W) acc += kr[2] * irow[x + 1];
                        orow[x] += acc;
                    }
                }
            }
        }
    }
}

// Gradient w.r.t. the conv input (correlation with flipped taps) plus
// optional weight/bias accumulation.
inline void conv3x3_backward(const double* in, const double* w, const double* dout,
                             double* din, double* dw, double* db,
                             std::int64_t Cin, std::int64_t Cout, std::int64_t H, std::int64_t W) {
    if (din)
        for (std::int64_t i = 0; i < Cin * H * W; ++i) din[i] = 0.0;
    for (std::int64_t co = 0; co < Cout; ++co) {
        const double* dplane = dout + co * H * W;
        if (db) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < H * W; ++i) acc += dplane[i];
            db[co] += acc;
        }
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const double* iplane = in + ci * H * W;
            double* dip = din ? din + ci * H * W : nullptr;
            const double* k = w + (co * Cin + ci) * 9;
            double* dk = dw ? dw + (co * Cin + ci) * 9 : nullptr;
            for (std::int64_t y = 0; y < H; ++y) {
                const double* drow = dplane + y * W;
                for (std::int64_t dy = -1; dy <= 1; ++dy) {
                    std::int64_t sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const double* irow = iplane + sy * W;
                    double* dirow = dip ? dip + sy * W : nullptr;
                    for (std::int64_t dx = -1; dx <= 1; ++dx) {
                        std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                        std::int64_t x1 = std::min<std::int64_t>(W, W - dx);
                        if (dk) {
                            double dkv = 0.0;
                            for (std::int64_t x = x0; x < x1; ++x)
                                dkv += drow[x] * irow[x + dx];
                            dk[(dy + 1) * 3 + (dx + 1)] += dkv;
                        }
                        if (dirow) {
                            double kv = k[(dy + 1) * 3 + (dx + 1)];
                            for (std::int64_t x = x0; x < x1; ++x)
                                dirow[x + dx] += drow[x] * kv;
                        }
                    }
                }
            }
        }
    }
}

inline void maxpool2(const double* in, double* out, std::int64_t* idx,
                     std::int64_t C, std::int64_t H, std::int64_t W) {
    std::int64_t Ho = H / 2, Wo = W / 2;
    for (std::int64_t c = 0; c < C; ++c) {
        const double* ip = in + c * H * W;
        double* op = out + c * Ho * Wo;
        std::int64_t* xp = idx + c * Ho * Wo;
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t x = 0; x < Wo; ++x) {
                std::int64_t base = (2 * y) * W + 2 * x;
                std::int64_t best = base;
                double bv = ip[base];
                if (ip[base + 1] > bv) { bv = ip[base + 1]; best = base + 1; }
                if (ip[base + W] > bv) { bv = ip[base + W]; best = base + W; }
                if (ip[base + W + 1] > bv) { bv = ip[base + W + 1]; best = base + W + 1; }
                op[y * Wo + x] = bv;
                xp[y * Wo + x] = best;
            }
    }
}

}  // namespace detail

struct CnnTrace {
    Tensor pre1, act1;   // [C1,S,S]
    Tensor pool1;        // [C1,S/2,S/2]
    std::vector<std::int64_t> idx1;
    Tensor pre2, act2;   // [C2,S/2,S/2]
    Tensor pool2;        // [C2,S/4,S/4]
    std::vector<std::int64_t> idx2;
    Tensor logits;       // [K]
};

inline Tensor cnn_forward(const CnnParams& p, const Tensor& x, CnnTrace& trace) {
    const CnnArch& a = p.arch;
    require_shape(x, {a.channels, a.image_side, a.image_side}, "cnn_forward input");
    std::int64_t S = a.image_side, C1 = a.conv1_out, C2 = a.conv2_out, K = a.classes;

    trace.pre1 = Tensor({C1, S, S});
    detail::conv3x3(x.ptr(), p.conv1_w.ptr(), p.conv1_b.ptr(), trace.pre1.ptr(),
                    a.channels, C1, S, S);
    trace.act1 = trace.pre1;
    for (auto& v : trace.act1.data) v = std::max(v, 0.0);
    trace.pool1 = Tensor({C1, S / 2, S / 2});
    trace.idx1.assign(static_cast<std::size_t>(C1 * (S / 2) * (S / 2)), 0);
    detail::maxpool2(trace.act1.ptr(), trace.pool1.ptr(), trace.idx1.data(), C1, S, S);

    trace.pre2 = Tensor({C2, S / 2, S / 2});
    detail::conv3x3(trace.pool1.ptr(), p.conv2_w.ptr(), p.conv2_b.ptr(), trace.pre2.ptr(),
                    C1, C2, S / 2, S / 2);
    trace.act2 = trace.pre2;
    for (auto& v : trace.act2.data) v = std::max(v, 0.0);
    trace.pool2 = Tensor({C2, S / 4, S / 4});
    trace.idx2.assign(static_cast<std::size_t>(C2 * (S / 4) * (S / 4)), 0);
    detail::maxpool2(trace.act2.ptr(), trace.pool2.ptr(), trace.idx2.data(), C2, S / 2, S / 2);

    trace.logits = Tensor({K});
    std::int64_t F = a.flat_dim();
    for (std::int64_t k = 0; k < K; ++k) {
        double acc = p.fc_b[k];
        for (std::int64_t f = 0; f < F; ++f) acc += trace.pool2[f] * p.fc_w.at2(f, k);
        trace.logits[k] = acc;
    }
    return trace.logits;
}

struct CnnGrads : CnnParams {};

inline CnnGrads cnn_zero_grads(const CnnArch& arch) {
    CnnGrads g;
    static_cast<CnnParams&>(g) = cnn_zero_params(arch);
    return g;
}

inline Tensor cnn_backward(const CnnTrace& trace, const CnnParams& p,
                           const Tensor& grad_logits, CnnGrads* grads = nullptr,
                           const Tensor* x_input = nullptr) {
    const CnnArch& a = p.arch;
    require_shape(grad_logits, {a.classes}, "cnn_backward grad_logits");
    std::int64_t S = a.image_side, C1 = a.conv1_out, C2 = a.conv2_out, K = a.classes;
    std::int64_t F = a.flat_dim();

    Tensor dpool2({C2, S / 4, S / 4});
    for (std::int64_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < K; ++k) acc += grad_logits[k] * p.fc_w.at2(f, k);
        dpool2[f] = acc;
    }
    if (grads) {
        for (std::int64_t k = 0; k < K; ++k) grads->fc_b[k] += grad_logits[k];
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t k = 0; k < K; ++k)
                grads->fc_w.at2(f, k) += trace.pool2[f] * grad_logits[k];
    }

    Tensor dact2({C2, S / 2, S / 2});
    std::int64_t n2 = C2 * (S / 4) * (S / 4);
    for (std::int64_t c = 0; c < C2; ++c) {
        std::int64_t per = (S / 4) * (S / 4);
        for (std::int64_t i = 0; i < per; ++i) {
            std::int64_t src = trace.idx2[static_cast<std::size_t>(c * per + i)];
            dact2[c * (S / 2) * (S / 2) + src] += dpool2[c * per + i];
        }
    }
    (void)n2;
    Tensor dpre2 = dact2;
    for (std::int64_t i = 0; i < dpre2.numel(); ++i)
        if (trace.pre2[i] <= 0.0) dpre2[i] = 0.0;

    Tensor dpool1({C1, S / 2, S / 2});
    detail::conv3x3_backward(trace.pool1.ptr(), p.conv2_w.ptr(), dpre2.ptr(), dpool1.ptr(),
                             grads ? grads->conv2_w.ptr() : nullptr,
                             grads ? grads->conv2_b.ptr() : nullptr, C1, C2, S / 2, S / 2);

    Tensor dact1({C1, S, S});
    for (std::int64_t c = 0; c < C1; ++c) {
        std::int64_t per = (S / 2) * (S / 2);
        for (std::int64_t i = 0; i < per; ++i) {
            std::int64_t src = trace.idx1[static_cast<std::size_t>(c * per + i)];
            dact1[c * S * S + src] += dpool1[c * per + i];
        }
    }
    Tensor dpre1 = dact1;
    for (std::int64_t i = 0; i < dpre1.numel(); ++i)
        if (trace.pre1[i] <= 0.0) dpre1[i] = 0.0;

    Tensor dx({a.channels, S, S});
    if (grads) {
        require(x_input != nullptr, "cnn_backward: parameter gradients need x_input");
        detail::conv3x3_backward(x_input->ptr(), p.conv1_w.ptr(), dpre1.ptr(), dx.ptr(),
                                 grads->conv1_w.ptr(), grads->conv1_b.ptr(),
                                 a.channels, C1, S, S);
    } else {
        // Input values are only needed for weight gradients.
        Tensor dummy({a.channels, S, S});
        detail::conv3x3_backward(dummy.ptr(), p.conv1_w.ptr(), dpre1.ptr(), dx.ptr(),
                                 nullptr, nullptr, a.channels, C1, S, S);
    }
    return dx;
}

}  // namespace tesser
