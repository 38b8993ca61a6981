#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tesser/blur.hpp"
#include "tesser/cnn.hpp"
#include "tesser/errors.hpp"
#include "tesser/kernels.hpp"
#include "tesser/modulation.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"
#include "tesser/vit.hpp"

namespace tesser {

enum class AttackMethod { pgd, mim, tesser };

inline const char* method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::pgd: return "pgd";
        case AttackMethod::mim: return "mim";
        case AttackMethod::tesser: return "tesser";
    }
    return "?";
}

// Gradient masking over patch-aligned cells: each cell of the input gradient
// is kept with probability keep, zeroed otherwise, redrawn every iteration.
struct PatchDropout {
    bool enabled = false;
    double keep = 0.7;
    int cell = 4;
};

struct AttackConfig {
    double epsilon = 16.0 / 255.0;
    int steps = 10;
    double step_size = 16.0 / 255.0 / 10.0;
    double momentum = 1.0;
    AttackMethod method = AttackMethod::tesser;
    ModulationConfig modulation;  // consumed by the tesser method only
    double sigma = 0.5;           // input-blur strength; 0 disables blurring
    int blur_size = 3;
    bool targeted = false;
    PatchDropout dropout;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;  // per-image stream id

    // steps == 0 and epsilon == 0 are admitted as degenerate no-op attacks.
    void validate() const {
        if (!(epsilon >= 0.0))
            throw ConfigError("attack: epsilon must be non-negative, got " +
                              std::to_string(epsilon));
        if (steps < 0)
            throw ConfigError("attack: steps must be non-negative, got " +
                              std::to_string(steps));
        if (!(step_size > 0.0))
            throw ConfigError("attack: step_size must be positive, got " +
                              std::to_string(step_size));
        if (!(momentum >= 0.0))
            throw ConfigError("attack: momentum must be non-negative, got " +
                              std::to_string(momentum));
        if (!(sigma >= 0.0))
            throw ConfigError("attack: sigma must be non-negative, got " + std::to_string(sigma));
        if (sigma > 0.0 && (blur_size < 1 || blur_size % 2 == 0))
            throw ConfigError("attack: blur_size must be a positive odd integer, got " +
                              std::to_string(blur_size));
        if (!(dropout.keep > 0.0 && dropout.keep <= 1.0))
            throw ConfigError("attack: dropout keep probability must lie in (0,1], got " +
                              std::to_string(dropout.keep));
        if (dropout.enabled && dropout.cell < 1)
            throw ConfigError("attack: dropout cell must be positive, got " +
                              std::to_string(dropout.cell));
    }
};

// One entry per attack step, evaluated on the unblurred x + delta_t.
struct AttackTraceEntry {
    int pred = -1;
    double conf_pred = 0.0;  // softmax probability of the predicted label
    double conf_true = 0.0;  // softmax probability of the original label
    double loss = 0.0;       // cross-entropy against the original label
    bool grad_degenerate = false;  // ||g||_1 was zero at this step
    double delta_inf = 0.0;        // ||delta_t||_inf after projection
    bool x_in_range = true;        // x + delta_t inside [0,1] at this step
};

struct AttackResult {
    Tensor delta;
    Tensor x_adv;
    bool success = false;
    int final_pred = -1;
    double final_conf = 0.0;
    int clean_pred = -1;
    double clean_loss = 0.0;
    std::vector<AttackTraceEntry> trace;
    double seconds = 0.0;  // wall clock; the only field exempt from determinism
};

// (y+1) mod K, the conventional fixed target assignment.
inline int targeted_wrap(int y, int classes) {
    require(classes >= 1, "targeted_wrap: classes must be >= 1");
    require(y >= 0 && y < classes, "targeted_wrap: label out of range");
    return (y + 1) % classes;
}

// Clamp delta into the l-inf ball of radius epsilon intersected with the box
// that keeps x + delta inside [0,1]. Computing the per-pixel bounds first and
// clamping once makes the operation exactly idempotent.
inline Tensor project(const Tensor& delta, const Tensor& x, double epsilon) {
    require(delta.shape == x.shape, "project: delta shape " + shape_str(delta) +
                                        " does not match x " + shape_str(x));
    require(epsilon >= 0.0, "project: epsilon must be non-negative");
    Tensor out = delta;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double hi = std::min(epsilon, 1.0 - x.data[i]);
        double lo = std::max(-epsilon, -x.data[i]);
        out.data[i] = std::min(hi, std::max(lo, out.data[i]));
    }
    return out;
}

namespace detail {

struct VitBackend {
    const ViTParams& p;
    int classes() const { return p.arch.classes; }
    int depth() const { return p.arch.depth; }
    Tensor forward_logits(const Tensor& x) const {
        ForwardTrace t;
        return vit_forward(p, x, t);
    }
    Tensor loss_input_grad(const Tensor& xin, int label, double grad_sign,
                           const ModulationHooks& hooks) const {
        ForwardTrace t;
        vit_forward(p, xin, t);
        Tensor gl({p.arch.classes});
        cross_entropy_grad(t.logits.ptr(), p.arch.classes, label, gl.ptr());
        if (grad_sign != 1.0)
            for (double& v : gl.data) v *= grad_sign;
        return vit_backward(t, p, gl, hooks);
    }
};

struct CnnBackend {
    const CnnParams& p;
    int classes() const { return p.arch.classes; }
    int depth() const { return 0; }
    Tensor forward_logits(const Tensor& x) const {
        CnnTrace t;
        return cnn_forward(p, x, t);
    }
    Tensor loss_input_grad(const Tensor& xin, int label, double grad_sign,
                           const ModulationHooks& hooks) const {
        require_contract(!hooks, "cnn attack backend cannot apply modulation hooks");
        CnnTrace t;
        cnn_forward(p, xin, t);
        Tensor gl({p.arch.classes});
        cross_entropy_grad(t.logits.ptr(), p.arch.classes, label, gl.ptr());
        if (grad_sign != 1.0)
            for (double& v : gl.data) v *= grad_sign;
        return cnn_backward(t, p, gl);
    }
};

inline void apply_patch_dropout(Tensor& grad, const PatchDropout& cfg, Rng rng) {
    std::int64_t C = grad.dim(0), H = grad.dim(1), W = grad.dim(2);
    std::int64_t cell = cfg.cell;
    std::int64_t gy = (H + cell - 1) / cell, gx = (W + cell - 1) / cell;
    for (std::int64_t cy = 0; cy < gy; ++cy)
        for (std::int64_t cx = 0; cx < gx; ++cx) {
            if (rng.uniform() < cfg.keep) continue;
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t y = cy * cell; y < std::min(H, (cy + 1) * cell); ++y)
                    for (std::int64_t x = cx * cell; x < std::min(W, (cx + 1) * cell); ++x)
                        grad.data[static_cast<std::size_t>((c * H + y) * W + x)] = 0.0;
        }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }

struct LoopFeatures {
    bool blur = false;
    bool hooks = false;
    bool dropout = false;
    bool momentum = false;
};

template <class Backend>
AttackResult attack_core(const Backend& model, const Tensor& x, int y, const AttackConfig& cfg,
                         const LoopFeatures& feat) {
    auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    require(x.rank() == 3, "attack: x must be [C,H,W], got " + shape_str(x));
    int K = model.classes();
    require(y >= 0 && y < K, "attack: label " + std::to_string(y) + " out of range for " +
                                 std::to_string(K) + " classes");
    for (double v : x.data)
        require(v >= 0.0 && v <= 1.0, "attack: x must lie in [0,1]");

    int label_eff = cfg.targeted ? targeted_wrap(y, K) : y;
    double grad_sign = cfg.targeted ? -1.0 : 1.0;

    AttackResult res;
    {
        Tensor logits0 = model.forward_logits(x);
        res.clean_pred = static_cast<int>(argmax(logits0.ptr(), K));
        res.clean_loss = cross_entropy(logits0.ptr(), K, y);
    }

    bool use_blur = feat.blur && cfg.sigma > 0.0;
    GaussianKernel kern;
    if (use_blur) kern = gaussian_kernel(cfg.sigma, cfg.blur_size);

    Rng img_rng(cfg.seed, cfg.stream);
    Tensor delta = zeros_like(x);
    Tensor accum = zeros_like(x);
    std::vector<double> probs(static_cast<std::size_t>(K));

    res.trace.reserve(static_cast<std::size_t>(cfg.steps));
    for (int t = 0; t < cfg.steps; ++t) {
        Tensor xin = add(x, delta);
        if (use_blur) xin = blur2d(xin, kern);
        ModulationHooks hooks;
        if (feat.hooks)
            hooks = make_hooks(cfg.modulation,
                               img_rng.split(2 * static_cast<std::uint64_t>(t) + 1));
        Tensor g = model.loss_input_grad(xin, label_eff, grad_sign, hooks);
        if (use_blur) g = blur2d_backward(g, kern);
        if (feat.dropout && cfg.dropout.enabled)
            apply_patch_dropout(g, cfg.dropout, img_rng.split(2 * static_cast<std::uint64_t>(t)));

        double n1 = l1_norm(g);
        bool degenerate = (n1 == 0.0);
        const Tensor* dir = &g;
        if (feat.momentum) {
            if (!degenerate)
                for (std::size_t i = 0; i < accum.data.size(); ++i)
                    accum.data[i] = cfg.momentum * accum.data[i] + g.data[i] / n1;
            dir = &accum;
        }
        for (std::size_t i = 0; i < delta.data.size(); ++i)
            delta.data[i] += cfg.step_size * sign(dir->data[i]);
        delta = project(delta, x, cfg.epsilon);

        Tensor xa = add(x, delta);
        Tensor logits = model.forward_logits(xa);
        AttackTraceEntry e;
        e.pred = static_cast<int>(argmax(logits.ptr(), K));
        softmax_probs(logits.ptr(), K, probs.data());
        e.conf_pred = probs[static_cast<std::size_t>(e.pred)];
        e.conf_true = probs[static_cast<std::size_t>(y)];
        e.loss = cross_entropy(logits.ptr(), K, y);
        e.grad_degenerate = degenerate;
        for (std::size_t i = 0; i < delta.data.size(); ++i) {
            e.delta_inf = std::max(e.delta_inf, std::abs(delta.data[i]));
            if (!(xa.data[i] >= 0.0 && xa.data[i] <= 1.0)) e.x_in_range = false;
        }
        res.trace.push_back(e);
    }

    res.delta = delta;
    res.x_adv = add(x, delta);
    if (res.trace.empty()) {
        Tensor logits = model.forward_logits(res.x_adv);
        res.final_pred = static_cast<int>(argmax(logits.ptr(), K));
        softmax_probs(logits.ptr(), K, probs.data());
        res.final_conf = probs[static_cast<std::size_t>(res.final_pred)];
    } else {
        res.final_pred = res.trace.back().pred;
        res.final_conf = res.trace.back().conf_pred;
    }
    res.success = cfg.targeted ? res.final_pred == label_eff : res.final_pred != y;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace detail

inline AttackResult pgd_attack(const ViTParams& p, const Tensor& x, int y,
                               const AttackConfig& cfg) {
    return detail::attack_core(detail::VitBackend{p}, x, y, cfg, {});
}

inline AttackResult pgd_attack(const CnnParams& p, const Tensor& x, int y,
                               const AttackConfig& cfg) {
    return detail::attack_core(detail::CnnBackend{p}, x, y, cfg, {});
}

inline AttackResult mim_attack(const ViTParams& p, const Tensor& x, int y,
                               const AttackConfig& cfg) {
    detail::LoopFeatures feat;
    feat.momentum = true;
    return detail::attack_core(detail::VitBackend{p}, x, y, cfg, feat);
}

inline AttackResult mim_attack(const CnnParams& p, const Tensor& x, int y,
                               const AttackConfig& cfg) {
    detail::LoopFeatures feat;
    feat.momentum = true;
    return detail::attack_core(detail::CnnBackend{p}, x, y, cfg, feat);
}

inline AttackResult tesser_attack(const ViTParams& p, const Tensor& x, int y,
                                  const AttackConfig& cfg) {
    cfg.modulation.validate(p.arch.depth);
    detail::LoopFeatures feat;
    feat.blur = true;
    feat.hooks = true;
    feat.dropout = true;
    feat.momentum = true;
    return detail::attack_core(detail::VitBackend{p}, x, y, cfg, feat);
}

inline AttackResult tesser_attack(const CnnParams&, const Tensor&, int, const AttackConfig&) {
    throw UnsupportedArchitecture(
        "tesser_attack: modulation hooks require a transformer surrogate, got a CNN");
}

template <class Params>
AttackResult run_attack(const Params& p, const Tensor& x, int y, const AttackConfig& cfg) {
    switch (cfg.method) {
        case AttackMethod::pgd: return pgd_attack(p, x, y, cfg);
        case AttackMethod::mim: return mim_attack(p, x, y, cfg);
        case AttackMethod::tesser: return tesser_attack(p, x, y, cfg);
    }
    throw ConfigError("attack: unknown method");
}

}  // namespace tesser
