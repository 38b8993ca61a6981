#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/kernels.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

enum class ModuleTag { attn, qkv, mlp };

inline const char* module_name(ModuleTag m) {
    switch (m) {
        case ModuleTag::attn: return "attn";
        case ModuleTag::qkv: return "qkv";
        default: return "mlp";
    }
}

struct ViTArch {
    int image_side = 32;
    int channels = 3;
    int patch_size = 4;
    int embed_dim = 64;
    int heads = 4;
    int depth = 6;
    int mlp_ratio = 4;
    int classes = 10;

    int grid() const { return image_side / patch_size; }
    int tokens() const { return grid() * grid(); }
    int seq_len() const { return tokens() + 1; }  // CLS prepended
    int head_dim() const { return embed_dim / heads; }
    int mlp_hidden() const { return embed_dim * mlp_ratio; }
    int patch_dim() const { return channels * patch_size * patch_size; }

    void validate() const {
        require(image_side > 0 && channels > 0 && patch_size > 0 && embed_dim > 0 &&
                    heads > 0 && depth > 0 && mlp_ratio > 0 && classes > 0,
                "ViTArch: all fields must be positive");
        require(image_side % patch_size == 0, "ViTArch: image_side must be divisible by patch_size");
        require(embed_dim % heads == 0, "ViTArch: embed_dim must be divisible by heads");
    }

    bool operator==(const ViTArch&) const = default;
};

struct ViTBlockParams {
    Tensor ln1_g, ln1_b;    // [D]
    Tensor qkv_w, qkv_b;    // [D,3D], [3D]
    Tensor proj_w, proj_b;  // [D,D], [D]
    Tensor ln2_g, ln2_b;    // [D]
    Tensor mlp_w1, mlp_b1;  // [D,Hm], [Hm]
    Tensor mlp_w2, mlp_b2;  // [Hm,D], [D]
};

struct ViTParams {
    ViTArch arch;
    Tensor patch_w, patch_b;  // [C*P*P, D], [D]
    Tensor cls;               // [D]
    Tensor pos;               // [T,D]
    std::vector<ViTBlockParams> blocks;
    Tensor lnf_g, lnf_b;      // [D]
    Tensor head_w, head_b;    // [D,K], [K]
};

// Visits every parameter tensor in the fixed serialization order.
template <typename P, typename F>
void vit_for_each_tensor(P& p, F&& fn) {
    fn("patch_w", p.patch_w);
    fn("patch_b", p.patch_b);
    fn("cls", p.cls);
    fn("pos", p.pos);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        std::string pre = "block" + std::to_string(l) + ".";
        fn(pre + "ln1_g", b.ln1_g);
        fn(pre + "ln1_b", b.ln1_b);
        fn(pre + "qkv_w", b.qkv_w);
        fn(pre + "qkv_b", b.qkv_b);
        fn(pre + "proj_w", b.proj_w);
        fn(pre + "proj_b", b.proj_b);
        fn(pre + "ln2_g", b.ln2_g);
        fn(pre + "ln2_b", b.ln2_b);
        fn(pre + "mlp_w1", b.mlp_w1);
        fn(pre + "mlp_b1", b.mlp_b1);
        fn(pre + "mlp_w2", b.mlp_w2);
        fn(pre + "mlp_b2", b.mlp_b2);
    }
    fn("lnf_g", p.lnf_g);
    fn("lnf_b", p.lnf_b);
    fn("head_w", p.head_w);
    fn("head_b", p.head_b);
}

inline ViTParams vit_zero_params(const ViTArch& arch) {
    arch.validate();
    ViTParams p;
    p.arch = arch;
    std::int64_t D = arch.embed_dim, T = arch.seq_len(), K = arch.classes;
    std::int64_t PD = arch.patch_dim(), Hm = arch.mlp_hidden();
    p.patch_w = Tensor({PD, D});
    p.patch_b = Tensor({D});
    p.cls = Tensor({D});
    p.pos = Tensor({T, D});
    p.blocks.resize(static_cast<std::size_t>(arch.depth));
    for (auto& b : p.blocks) {
        b.ln1_g = Tensor({D});
        b.ln1_b = Tensor({D});
        b.qkv_w = Tensor({D, 3 * D});
        b.qkv_b = Tensor({3 * D});
        b.proj_w = Tensor({D, D});
        b.proj_b = Tensor({D});
        b.ln2_g = Tensor({D});
        b.ln2_b = Tensor({D});
        b.mlp_w1 = Tensor({D, Hm});
        b.mlp_b1 = Tensor({Hm});
        b.mlp_w2 = Tensor({Hm, D});
        b.mlp_b2 = Tensor({D});
    }
    p.lnf_g = Tensor({D});
    p.lnf_b = Tensor({D});
    p.head_w = Tensor({D, K});
    p.head_b = Tensor({K});
    return p;
}

// LeCun-style init: weights ~ N(0, 1/fan_in), LN gains 1, biases 0. The
// residual-branch outputs (proj, mlp_w2) are damped by 1/sqrt(2L) and the
// classifier head starts at zero, so initial logits are exactly uniform and
// the first SGD steps stay in a gentle regime.
inline ViTParams vit_init(const ViTArch& arch, Rng rng) {
    ViTParams p = vit_zero_params(arch);
    auto fill_normal = [&rng](Tensor& t, double std) {
        for (auto& v : t.data) v = rng.normal() * std;
    };
    fill_normal(p.patch_w, 1.0 / std::sqrt(static_cast<double>(arch.patch_dim())));
    fill_normal(p.cls, 0.02);
    fill_normal(p.pos, 0.02);
    double ds = 1.0 / std::sqrt(static_cast<double>(arch.embed_dim));
    double damp = 1.0 / std::sqrt(2.0 * arch.depth);
    for (auto& b : p.blocks) {
        b.ln1_g.fill(1.0);
        b.ln2_g.fill(1.0);
        fill_normal(b.qkv_w, ds);
        fill_normal(b.proj_w, ds * damp);
        fill_normal(b.mlp_w1, ds);
        fill_normal(b.mlp_w2, damp / std::sqrt(static_cast<double>(arch.mlp_hidden())));
    }
    p.lnf_g.fill(1.0);
    return p;
}

struct ViTBlockTrace {
    Tensor z_in;   // [T,D] residual stream entering the block (Z_l)
    Tensor xhat1, y1;  // [T,D] LN1 cache and output
    Tensor rstd1;      // [T]
    Tensor qkv;        // [T,3D]
    Tensor A;          // [heads,T,T] attention probabilities
    Tensor ctx;        // [T,D] concatenated head outputs
    Tensor z_mid;      // [T,D] after attention residual
    Tensor xhat2, y2;  // [T,D] LN2 cache and output
    Tensor rstd2;      // [T]
    Tensor hpre, hact; // [T,Hm]
    Tensor mlp_out;    // [T,D]
};

struct ForwardTrace {
    std::vector<ViTBlockTrace> blocks;
    Tensor z_final;        // [T,D]
    Tensor xhatf, yf;      // [T,D]
    Tensor rstdf;          // [T]
    Tensor logits;         // [K]
};

// Hook invoked right after the backward pass computes the gradient w.r.t. a
// module output, before that gradient propagates further. grad is modified
// in place; z_block is the residual-stream input to the same block.
struct ModulationHooks {
    std::function<void(ModuleTag, int block, Tensor& grad, const Tensor& z_block)> fn;
    explicit operator bool() const { return static_cast<bool>(fn); }
};

namespace detail {

// out[T,D] = in[T,Din] * W[Din,D] + b[D]
inline void linear_rows(const Tensor& in, const Tensor& W, const Tensor& b, Tensor& out) {
    std::int64_t T = in.dim(0), Din = in.dim(1), D = W.dim(1);
    gemm_nn(in.ptr(), W.ptr(), out.ptr(), T, Din, D);
    for (std::int64_t t = 0; t < T; ++t) {
        double* row = out.ptr() + t * D;
        for (std::int64_t d = 0; d < D; ++d) row[d] += b[d];
    }
}

inline void gather_head(const Tensor& qkv, std::int64_t part, std::int64_t head,
                        std::int64_t dh, Tensor& out) {
    std::int64_t T = qkv.dim(0), W = qkv.dim(1);
    std::int64_t D = W / 3;
    std::int64_t off = part * D + head * dh;
    for (std::int64_t t = 0; t < T; ++t) {
        const double* src = qkv.ptr() + t * W + off;
        double* dst = out.ptr() + t * dh;
        for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
    }
}

inline void scatter_head_add(const Tensor& part_grad, std::int64_t part, std::int64_t head,
                             std::int64_t dh, Tensor& dqkv) {
    std::int64_t T = dqkv.dim(0), W = dqkv.dim(1);
    std::int64_t D = W / 3;
    std::int64_t off = part * D + head * dh;
    for (std::int64_t t = 0; t < T; ++t) {
        const double* src = part_grad.ptr() + t * dh;
        double* dst = dqkv.ptr() + t * W + off;
        for (std::int64_t d = 0; d < dh; ++d) dst[d] += src[d];
    }
}

}  // namespace detail

// Patch embedding: row-major patch grid, pixels flattened in (c,y,x) order.
inline void vit_patchify(const ViTArch& arch, const Tensor& x, Tensor& patches) {
    std::int64_t P = arch.patch_size, G = arch.grid(), C = arch.channels;
    std::int64_t H = arch.image_side, W = arch.image_side;
    for (std::int64_t gy = 0; gy < G; ++gy)
        for (std::int64_t gx = 0; gx < G; ++gx) {
            double* row = patches.ptr() + (gy * G + gx) * arch.patch_dim();
            std::int64_t k = 0;
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t py = 0; py < P; ++py)
                    for (std::int64_t px = 0; px < P; ++px)
                        row[k++] = x[c * H * W + (gy * P + py) * W + (gx * P + px)];
        }
}

inline Tensor vit_forward(const ViTParams& p, const Tensor& x, ForwardTrace& trace) {
    const ViTArch& arch = p.arch;
    require_shape(x, {arch.channels, arch.image_side, arch.image_side}, "vit_forward input");
    std::int64_t T = arch.seq_len(), D = arch.embed_dim, N = arch.tokens();
    std::int64_t heads = arch.heads, dh = arch.head_dim(), Hm = arch.mlp_hidden();
    std::int64_t K = arch.classes;

    Tensor patches({N, arch.patch_dim()});
    vit_patchify(arch, x, patches);

    Tensor z({T, D});
    gemm_nn(patches.ptr(), p.patch_w.ptr(), z.ptr() + D, N, arch.patch_dim(), D);
    for (std::int64_t d = 0; d < D; ++d) z[d] = p.cls[d] + p.pos.at2(0, d);
    for (std::int64_t t = 1; t < T; ++t) {
        double* row = z.ptr() + t * D;
        for (std::int64_t d = 0; d < D; ++d) row[d] += p.patch_b[d] + p.pos.at2(t, d);
    }

    trace.blocks.resize(static_cast<std::size_t>(arch.depth));
    Tensor q({T, dh}), k({T, dh}), v({T, dh}), s({T, T}), a({T, T}), hctx({T, dh});
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < arch.depth; ++l) {
        auto& bp = p.blocks[static_cast<std::size_t>(l)];
        auto& bt = trace.blocks[static_cast<std::size_t>(l)];
        bt.z_in = z;
        bt.xhat1 = Tensor({T, D});
        bt.rstd1 = Tensor({T});
        bt.y1 = Tensor({T, D});
        layernorm_rows(z.ptr(), bp.ln1_g.ptr(), bp.ln1_b.ptr(), bt.y1.ptr(),
                       bt.xhat1.ptr(), bt.rstd1.ptr(), T, D);

        bt.qkv = Tensor({T, 3 * D});
        detail::linear_rows(bt.y1, bp.qkv_w, bp.qkv_b, bt.qkv);

        bt.A = Tensor({heads, T, T});
        bt.ctx = Tensor({T, D});
        for (std::int64_t h = 0; h < heads; ++h) {
            detail::gather_head(bt.qkv, 0, h, dh, q);
            detail::gather_head(bt.qkv, 1, h, dh, k);
            detail::gather_head(bt.qkv, 2, h, dh, v);
            gemm_nt(q.ptr(), k.ptr(), s.ptr(), T, dh, T);
            for (auto& sv : s.data) sv *= inv_sqrt_dh;
            double* A_h = bt.A.ptr() + h * T * T;
            softmax_rows(s.ptr(), A_h, T, T);
            gemm_nn(A_h, v.ptr(), hctx.ptr(), T, T, dh);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* src = hctx.ptr() + t * dh;
                double* dst = bt.ctx.ptr() + t * D + h * dh;
                for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
            }
        }

        Tensor attn_out({T, D});
        detail::linear_rows(bt.ctx, bp.proj_w, bp.proj_b, attn_out);
        bt.z_mid = Tensor({T, D});
        for (std::int64_t i = 0; i < T * D; ++i) bt.z_mid[i] = z[i] + attn_out[i];

        bt.xhat2 = Tensor({T, D});
        bt.rstd2 = Tensor({T});
        bt.y2 = Tensor({T, D});
        layernorm_rows(bt.z_mid.ptr(), bp.ln2_g.ptr(), bp.ln2_b.ptr(), bt.y2.ptr(),
                       bt.xhat2.ptr(), bt.rstd2.ptr(), T, D);

        bt.hpre = Tensor({T, Hm});
        detail::linear_rows(bt.y2, bp.mlp_w1, bp.mlp_b1, bt.hpre);
        bt.hact = Tensor({T, Hm});
        gelu_forward(bt.hpre.ptr(), bt.hact.ptr(), T * Hm);
        bt.mlp_out = Tensor({T, D});
        detail::linear_rows(bt.hact, bp.mlp_w2, bp.mlp_b2, bt.mlp_out);

        for (std::int64_t i = 0; i < T * D; ++i) z[i] = bt.z_mid[i] + bt.mlp_out[i];
    }

    trace.z_final = z;
    trace.xhatf = Tensor({T, D});
    trace.rstdf = Tensor({T});
    trace.yf = Tensor({T, D});
    layernorm_rows(z.ptr(), p.lnf_g.ptr(), p.lnf_b.ptr(), trace.yf.ptr(),
                   trace.xhatf.ptr(), trace.rstdf.ptr(), T, D);

    trace.logits = Tensor({K});
    for (std::int64_t kk = 0; kk < K; ++kk) {
        double acc = p.head_b[kk];
        for (std::int64_t d = 0; d < D; ++d) acc += trace.yf[d] * p.head_w.at2(d, kk);
        trace.logits[kk] = acc;
    }
    return trace.logits;
}

struct ViTGrads : ViTParams {};

inline ViTGrads vit_zero_grads(const ViTArch& arch) {
    ViTGrads g;
    static_cast<ViTParams&>(g) = vit_zero_params(arch);
    return g;
}

namespace detail {

inline void run_hook(const ModulationHooks& hooks, ModuleTag m, int block,
                     Tensor& grad, const Tensor& z_block) {
    if (!hooks) return;
    auto shape = grad.shape;
    hooks.fn(m, block, grad, z_block);
    require_contract(grad.shape == shape,
                     std::string("modulation hook changed gradient shape at module ") +
                         module_name(m) + ", block " + std::to_string(block));
}

}  // namespace detail

// Reverse-mode gradient of the scalar loss whose logit-gradient is
// grad_logits. Returns d loss / d x; accumulates parameter gradients into
// *grads when non-null (x_input must then be supplied so the patch-embedding
// weight gradient can be formed). Hooks fire on the module-output gradients
// in the order the backward pass reaches them (mlp, attn, qkv per block).
inline Tensor vit_backward(const ForwardTrace& trace, const ViTParams& p,
                           const Tensor& grad_logits, const ModulationHooks& hooks = {},
                           ViTGrads* grads = nullptr, const Tensor* x_input = nullptr) {
    const ViTArch& arch = p.arch;
    require(static_cast<int>(trace.blocks.size()) == arch.depth,
            "vit_backward: trace depth mismatch");
    require_shape(grad_logits, {arch.classes}, "vit_backward grad_logits");
    std::int64_t T = arch.seq_len(), D = arch.embed_dim, N = arch.tokens();
    std::int64_t heads = arch.heads, dh = arch.head_dim(), Hm = arch.mlp_hidden();
    std::int64_t K = arch.classes;

    // Head: logits = yf[0,:] . head_w + head_b
    Tensor dyf({T, D});
    for (std::int64_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::int64_t kk = 0; kk < K; ++kk) acc += grad_logits[kk] * p.head_w.at2(d, kk);
        dyf[d] = acc;
    }
    if (grads) {
        for (std::int64_t kk = 0; kk < K; ++kk) grads->head_b[kk] += grad_logits[kk];
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t kk = 0; kk < K; ++kk)
                grads->head_w.at2(d, kk) += trace.yf[d] * grad_logits[kk];
    }

    Tensor dz({T, D});
    layernorm_rows_backward(dyf.ptr(), trace.xhatf.ptr(), trace.rstdf.ptr(), p.lnf_g.ptr(),
                            dz.ptr(), grads ? grads->lnf_g.ptr() : nullptr,
                            grads ? grads->lnf_b.ptr() : nullptr, T, D);

    Tensor dmlp_out({T, D}), dhact({T, Hm}), dhpre({T, Hm}), dy2({T, D}), dz_mid({T, D});
    Tensor dattn_out({T, D}), dctx({T, D}), dy1({T, D}), dqkv({T, 3 * D});
    Tensor q({T, dh}), k({T, dh}), v({T, dh});
    Tensor dctx_h({T, dh}), dA({heads, T, T}), dS({T, T}), dpart({T, dh});
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = arch.depth - 1; l >= 0; --l) {
        auto& bp = p.blocks[static_cast<std::size_t>(l)];
        auto& bt = trace.blocks[static_cast<std::size_t>(l)];

        // MLP branch; dz carries d loss / d z_out.
        dmlp_out = dz;
        detail::run_hook(hooks, ModuleTag::mlp, l, dmlp_out, bt.z_in);

        gemm_nt(dmlp_out.ptr(), bp.mlp_w2.ptr(), dhact.ptr(), T, D, Hm);
        if (grads) {
            auto& bg = grads->blocks[static_cast<std::size_t>(l)];
            gemm_tn_acc(bt.hact.ptr(), dmlp_out.ptr(), bg.mlp_w2.ptr(), T, Hm, D);
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t d = 0; d < D; ++d) bg.mlp_b2[d] += dmlp_out.at2(t, d);
        }
        gelu_backward(bt.hpre.ptr(), dhact.ptr(), dhpre.ptr(), T * Hm);
        gemm_nt(dhpre.ptr(), bp.mlp_w1.ptr(), dy2.ptr(), T, Hm, D);
        if (grads) {
            auto& bg = grads->blocks[static_cast<std::size_t>(l)];
            gemm_tn_acc(bt.y2.ptr(), dhpre.ptr(), bg.mlp_w1.ptr(), T, D, Hm);
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t h = 0; h < Hm; ++h) bg.mlp_b1[h] += dhpre.at2(t, h);
        }

        {
            auto* bg_ln = grads ? &grads->blocks[static_cast<std::size_t>(l)] : nullptr;
            layernorm_rows_backward(dy2.ptr(), bt.xhat2.ptr(), bt.rstd2.ptr(), bp.ln2_g.ptr(),
                                    dz_mid.ptr(), bg_ln ? bg_ln->ln2_g.ptr() : nullptr,
                                    bg_ln ? bg_ln->ln2_b.ptr() : nullptr, T, D);
        }
        // Residual: z_out = z_mid + mlp_out
        for (std::int64_t i = 0; i < T * D; ++i) dz_mid[i] += dz[i];

        // Attention branch; z_mid = z_in + attn_out.
        dattn_out = dz_mid;
        gemm_nt(dattn_out.ptr(), bp.proj_w.ptr(), dctx.ptr(), T, D, D);
        if (grads) {
            auto& bg = grads->blocks[static_cast<std::size_t>(l)];
            gemm_tn_acc(bt.ctx.ptr(), dattn_out.ptr(), bg.proj_w.ptr(), T, D, D);
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t d = 0; d < D; ++d) bg.proj_b[d] += dattn_out.at2(t, d);
        }

        // d loss / d A for every head, then the attention hook.
        for (std::int64_t h = 0; h < heads; ++h) {
            detail::gather_head(bt.qkv, 2, h, dh, v);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* src = dctx.ptr() + t * D + h * dh;
                double* dst = dctx_h.ptr() + t * dh;
                for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
            }
            gemm_nt(dctx_h.ptr(), v.ptr(), dA.ptr() + h * T * T, T, dh, T);
        }
        detail::run_hook(hooks, ModuleTag::attn, l, dA, bt.z_in);

        dqkv.zero();
        for (std::int64_t h = 0; h < heads; ++h) {
            detail::gather_head(bt.qkv, 0, h, dh, q);
            detail::gather_head(bt.qkv, 1, h, dh, k);
            const double* A_h = bt.A.ptr() + h * T * T;
            softmax_rows_backward(A_h, dA.ptr() + h * T * T, dS.ptr(), T, T);
            for (auto& sv : dS.data) sv *= inv_sqrt_dh;
            // dQ = dS * K ; dK = dS^T * Q ; dV = A^T * dctx_h
            gemm_nn(dS.ptr(), k.ptr(), dpart.ptr(), T, T, dh);
            detail::scatter_head_add(dpart, 0, h, dh, dqkv);
            gemm_tn(dS.ptr(), q.ptr(), dpart.ptr(), T, T, dh);
            detail::scatter_head_add(dpart, 1, h, dh, dqkv);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* src = dctx.ptr() + t * D + h * dh;
                double* dst = dctx_h.ptr() + t * dh;
                for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
            }
            gemm_tn(A_h, dctx_h.ptr(), dpart.ptr(), T, T, dh);
            detail::scatter_head_add(dpart, 2, h, dh, dqkv);
        }
        detail::run_hook(hooks, ModuleTag::qkv, l, dqkv, bt.z_in);

        gemm_nt(dqkv.ptr(), bp.qkv_w.ptr(), dy1.ptr(), T, 3 * D, D);
        if (grads) {
            auto& bg = grads->blocks[static_cast<std::size_t>(l)];
            gemm_tn_acc(bt.y1.ptr(), dqkv.ptr(), bg.qkv_w.ptr(), T, D, 3 * D);
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t d = 0; d < 3 * D; ++d) bg.qkv_b[d] += dqkv.at2(t, d);
        }
        {
            auto* bg_ln = grads ? &grads->blocks[static_cast<std::size_t>(l)] : nullptr;
            layernorm_rows_backward(dy1.ptr(), bt.xhat1.ptr(), bt.rstd1.ptr(), bp.ln1_g.ptr(),
                                    dz.ptr(), bg_ln ? bg_ln->ln1_g.ptr() : nullptr,
                                    bg_ln ? bg_ln->ln1_b.ptr() : nullptr, T, D);
        }
        // Residual: z_mid = z_in + attn_out; dz now holds d loss / d z_in.
        for (std::int64_t i = 0; i < T * D; ++i) dz[i] += dz_mid[i];
    }

    if (grads) {
        for (std::int64_t d = 0; d < D; ++d) grads->cls[d] += dz[d];
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) grads->pos.at2(t, d) += dz.at2(t, d);
        for (std::int64_t t = 1; t < T; ++t)
            for (std::int64_t d = 0; d < D; ++d) grads->patch_b[d] += dz.at2(t, d);
    }

    // Patch embedding backward to pixel space.
    Tensor dpatches({N, arch.patch_dim()});
    gemm_nt(dz.ptr() + D, p.patch_w.ptr(), dpatches.ptr(), N, D, arch.patch_dim());
    if (grads) {
        require(x_input != nullptr, "vit_backward: parameter gradients need x_input");
        Tensor patches({N, arch.patch_dim()});
        vit_patchify(arch, *x_input, patches);
        gemm_tn_acc(patches.ptr(), dz.ptr() + D, grads->patch_w.ptr(),
                    N, arch.patch_dim(), D);
    }
    Tensor dx({arch.channels, arch.image_side, arch.image_side});
    std::int64_t P = arch.patch_size, G = arch.grid(), C = arch.channels, W = arch.image_side;
    for (std::int64_t gy = 0; gy < G; ++gy)
        for (std::int64_t gx = 0; gx < G; ++gx) {
            const double* row = dpatches.ptr() + (gy * G + gx) * arch.patch_dim();
            std::int64_t kk = 0;
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t py = 0; py < P; ++py)
                    for (std::int64_t px = 0; px < P; ++px)
                        dx[c * W * W + (gy * P + py) * W + (gx * P + px)] = row[kk++];
        }
    return dx;
}

}  // namespace tesser
