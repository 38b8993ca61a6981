#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"
#include "tesser/vit.hpp"

namespace tesser {

// Gradient-modulation settings. The backward hooks run three stages in order:
//   1. module-wise weakening: multiply the module gradient by omega_m
//   2. attention truncation: zero the attention gradient in blocks l >= l_cut
//   3. token scaling: multiply token i's gradient slice by
//        s_i = gamma_base + lambda_m * [(1-beta_l)*a_i + beta_l*(1-a_i)]
//      where a_i is the min-max normalized activation norm of token i and
//      beta_l = 1 exactly for blocks in early_set.
// Block indices are 0-based throughout; l_cut == depth never truncates.
struct ModulationConfig {
    double gamma_base = 0.5;
    double lambda_attn = 0.4;
    double lambda_qkv = 0.5;
    double lambda_mlp = 0.55;
    double omega_attn = 0.45;
    double omega_qkv = 0.5;
    double omega_mlp = 0.7;
    int l_cut = 5;
    std::set<int> early_set = {0, 1};
    double eps_norm = 1e-8;
    bool enable_weakening = true;
    bool enable_truncation = true;
    bool enable_fsgs = true;
    // Ablation baseline: draw each s_i uniformly from [gamma_base, gamma_base + lambda_m]
    // instead of computing it from token importance.
    bool random_scaling = false;
    // Whether the CLS row participates in the min/max statistics of the
    // normalization. When false, statistics come from patch tokens only and
    // the CLS score is clamped back into [0,1].
    bool include_cls = true;

    double lambda_for(ModuleTag m) const {
        switch (m) {
            case ModuleTag::attn: return lambda_attn;
            case ModuleTag::qkv: return lambda_qkv;
            case ModuleTag::mlp: return lambda_mlp;
        }
        return 0.0;
    }

    double omega_for(ModuleTag m) const {
        switch (m) {
            case ModuleTag::attn: return omega_attn;
            case ModuleTag::qkv: return omega_qkv;
            case ModuleTag::mlp: return omega_mlp;
        }
        return 1.0;
    }

    void validate(int depth) const {
        if (!(gamma_base > 0.0 && gamma_base <= 1.0))
            throw ConfigError("modulation: gamma_base must lie in (0,1], got " +
                              std::to_string(gamma_base));
        for (ModuleTag m : {ModuleTag::attn, ModuleTag::qkv, ModuleTag::mlp}) {
            double w = omega_for(m), lam = lambda_for(m);
            if (!(w > 0.0 && w <= 1.0))
                throw ConfigError(std::string("modulation: omega_") + module_name(m) +
                                  " must lie in (0,1], got " + std::to_string(w));
            if (!(lam >= 0.0))
                throw ConfigError(std::string("modulation: lambda_") + module_name(m) +
                                  " must be non-negative, got " + std::to_string(lam));
        }
        if (l_cut < 0 || l_cut > depth)
            throw ConfigError("modulation: l_cut must lie in [0," + std::to_string(depth) +
                              "], got " + std::to_string(l_cut));
        for (int l : early_set)
            if (l < 0 || l >= depth)
                throw ConfigError("modulation: early_set entry " + std::to_string(l) +
                                  " outside [0," + std::to_string(depth - 1) + "]");
        if (!(eps_norm > 0.0))
            throw ConfigError("modulation: eps_norm must be positive, got " +
                              std::to_string(eps_norm));
    }

    // Default hyperparameters for a transformer of the given depth: the
    // truncation point scales as ceil(10*depth/12) and the early set is the
    // first ceil(depth/3) blocks.
    static ModulationConfig defaults_for_depth(int depth) {
        require(depth >= 1, "defaults_for_depth: depth must be >= 1");
        ModulationConfig cfg;
        cfg.l_cut = static_cast<int>((10 * static_cast<std::int64_t>(depth) + 11) / 12);
        cfg.early_set.clear();
        int n_early = (depth + 2) / 3;
        for (int l = 0; l < n_early; ++l) cfg.early_set.insert(l);
        return cfg;
    }

    // Values that make every stage an exact identity: omega = 1, lambda = 0,
    // gamma_base = 1, truncation never fires, no early blocks.
    static ModulationConfig neutral(int depth) {
        require(depth >= 1, "neutral: depth must be >= 1");
        ModulationConfig cfg;
        cfg.gamma_base = 1.0;
        cfg.lambda_attn = cfg.lambda_qkv = cfg.lambda_mlp = 0.0;
        cfg.omega_attn = cfg.omega_qkv = cfg.omega_mlp = 1.0;
        cfg.l_cut = depth;
        cfg.early_set.clear();
        return cfg;
    }
};

// Raw per-token activation norms and their min-max normalized scores.
struct TokenImportance {
    std::vector<double> alpha;      // ||z_i||_2
    std::vector<double> alpha_hat;  // (alpha_i - min) / (max - min + eps), in [0,1]
};

// Per-token gradient scale factors for one (block, module) site.
struct ScaleVector {
    std::vector<double> s;
    int block = 0;
    ModuleTag module = ModuleTag::attn;
};

// alpha_i = ||z_i||_2 over rows of Z[T,D]; alpha_hat = min-max normalized with
// an epsilon guard so an all-equal row set maps to all zeros. When
// include_first_in_stats is false the first row is excluded from the min/max
// and its score is clamped back into [0,1].
inline TokenImportance token_importance(const Tensor& Z, double eps_norm,
                                        bool include_first_in_stats = true) {
    require(Z.rank() == 2, "token_importance: Z must be rank 2, got " + shape_str(Z));
    require(eps_norm > 0.0, "token_importance: eps_norm must be positive");
    std::int64_t T = Z.dim(0), D = Z.dim(1);
    TokenImportance imp;
    imp.alpha.resize(static_cast<std::size_t>(T));
    imp.alpha_hat.resize(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        double ss = 0.0;
        const double* row = Z.ptr() + t * D;
        for (std::int64_t d = 0; d < D; ++d) ss += row[d] * row[d];
        imp.alpha[static_cast<std::size_t>(t)] = std::sqrt(ss);
    }
    std::int64_t stat_begin = include_first_in_stats ? 0 : 1;
    require(stat_begin < T, "token_importance: no rows left for statistics");
    double lo = imp.alpha[static_cast<std::size_t>(stat_begin)];
    double hi = lo;
    for (std::int64_t t = stat_begin; t < T; ++t) {
        double a = imp.alpha[static_cast<std::size_t>(t)];
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    double denom = hi - lo + eps_norm;
    for (std::int64_t t = 0; t < T; ++t) {
        double v = (imp.alpha[static_cast<std::size_t>(t)] - lo) / denom;
        if (!include_first_in_stats) v = std::min(1.0, std::max(0.0, v));
        imp.alpha_hat[static_cast<std::size_t>(t)] = v;
    }
    return imp;
}

// s_i = gamma_base + lambda_m * [(1-beta)*a_i + beta*(1-a_i)], beta = 1 iff
// l is in early_set. Under cfg.random_scaling the factors are instead drawn
// uniformly from [gamma_base, gamma_base + lambda_m] using rng, which must
// then be provided.
inline ScaleVector scale_factors(const TokenImportance& imp, int l, ModuleTag m,
                                 const ModulationConfig& cfg, Rng* rng = nullptr) {
    ScaleVector sv;
    sv.block = l;
    sv.module = m;
    sv.s.resize(imp.alpha_hat.size());
    double lam = cfg.lambda_for(m);
    if (cfg.random_scaling) {
        require(rng != nullptr, "scale_factors: random_scaling requires an rng");
        for (double& s : sv.s) s = rng->uniform(cfg.gamma_base, cfg.gamma_base + lam);
        return sv;
    }
    double beta = cfg.early_set.count(l) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < sv.s.size(); ++i) {
        double a = imp.alpha_hat[i];
        sv.s[i] = cfg.gamma_base + lam * ((1.0 - beta) * a + beta * (1.0 - a));
    }
    return sv;
}

namespace detail {

inline void scale_token_rows(Tensor& grad, ModuleTag m, const std::vector<double>& s) {
    if (m == ModuleTag::attn) {
        // [heads, T, T]: scale along the query axis, row i of every head by s_i.
        std::int64_t H = grad.dim(0), T = grad.dim(1);
        require_contract(T == static_cast<std::int64_t>(s.size()),
                         "scale_token_rows: attention query axis does not match token count");
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t i = 0; i < T; ++i) {
                double* row = grad.ptr() + (h * T + i) * T;
                double f = s[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < T; ++j) row[j] *= f;
            }
        return;
    }
    // [T, cols]: scale row i by s_i.
    std::int64_t T = grad.dim(0), cols = grad.dim(1);
    require_contract(T == static_cast<std::int64_t>(s.size()),
                     "scale_token_rows: token axis does not match token count");
    for (std::int64_t i = 0; i < T; ++i) {
        double* row = grad.ptr() + i * cols;
        double f = s[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < cols; ++j) row[j] *= f;
    }
}

inline void check_module_grad_shape(const Tensor& grad, const Tensor& Z, ModuleTag m) {
    std::int64_t T = Z.dim(0), D = Z.dim(1);
    bool ok = false;
    if (m == ModuleTag::attn)
        ok = grad.rank() == 3 && grad.dim(1) == T && grad.dim(2) == T;
    else if (m == ModuleTag::qkv)
        ok = grad.rank() == 2 && grad.dim(0) == T && grad.dim(1) == 3 * D;
    else
        ok = grad.rank() == 2 && grad.dim(0) == T && grad.dim(1) == D;
    require_contract(ok, std::string("apply_modulation: gradient shape ") +
                             shape_str(grad) + " does not match module " +
                             module_name(m) + " with Z " + shape_str(Z));
}

}  // namespace detail

// Full pipeline on one module gradient, in place: weakening, then truncation,
// then token scaling. Z is the residual-stream input of the same block.
inline void modulate_inplace(Tensor& grad, const Tensor& Z, int l, ModuleTag m,
                             const ModulationConfig& cfg, Rng* rng = nullptr) {
    require(Z.rank() == 2, "apply_modulation: Z must be rank 2, got " + shape_str(Z));
    detail::check_module_grad_shape(grad, Z, m);
    if (cfg.enable_weakening) {
        double w = cfg.omega_for(m);
        for (double& g : grad.data) g *= w;
    }
    if (cfg.enable_truncation && m == ModuleTag::attn && l >= cfg.l_cut) {
        grad.zero();
        return;
    }
    if (cfg.enable_fsgs) {
        TokenImportance imp = token_importance(Z, cfg.eps_norm, cfg.include_cls);
        ScaleVector sv = scale_factors(imp, l, m, cfg, rng);
        detail::scale_token_rows(grad, m, sv.s);
    }
}

inline Tensor apply_modulation(const Tensor& grad, const Tensor& Z, int l, ModuleTag m,
                               const ModulationConfig& cfg, Rng* rng = nullptr) {
    Tensor out = grad;
    modulate_inplace(out, Z, l, m, cfg, rng);
    return out;
}

// Packages the pipeline as backward hooks. Random-scaling draws come from a
// stream derived from draw_base keyed by (block, module), so the factors do
// not depend on the order in which the backward pass fires the hooks.
inline ModulationHooks make_hooks(const ModulationConfig& cfg, Rng draw_base = Rng(0, 0)) {
    ModulationHooks hooks;
    hooks.fn = [cfg, draw_base](ModuleTag m, int block, Tensor& grad, const Tensor& z_block) {
        if (cfg.random_scaling) {
            Rng r = draw_base.split(static_cast<std::uint64_t>(3 * block) +
                                    static_cast<std::uint64_t>(m));
            modulate_inplace(grad, z_block, block, m, cfg, &r);
        } else {
            modulate_inplace(grad, z_block, block, m, cfg, nullptr);
        }
    };
    return hooks;
}

}  // namespace tesser
