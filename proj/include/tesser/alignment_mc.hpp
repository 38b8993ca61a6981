#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tesser/errors.hpp"
#include "tesser/metrics.hpp"
#include "tesser/modulation.hpp"
#include "tesser/rng.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

// Synthetic alignment experiment: per trial, a target gradient direction is
// drawn, every token gradient is constructed with an exact cosine to it
// (rho_sem for semantic tokens, rho_bg for background tokens), and semantic
// tokens carry the larger norm so late-layer scaling up-weights exactly them.
struct AlignmentTrialConfig {
    int tokens = 65;
    int dim = 64;
    double semantic_fraction = 0.3;
    double rho_sem = 0.8;
    double rho_bg = 0.0;
    double norm_sem = 2.0;
    double norm_bg = 1.0;
    int trials = 1000;
    std::uint64_t seed = 0;
    double gamma_base = 0.5;
    double lambda = 0.5;

    void validate() const {
        if (tokens < 1) throw ConfigError("alignment: tokens must be >= 1");
        if (dim < 2) throw ConfigError("alignment: dim must be >= 2");
        if (!(semantic_fraction >= 0.0 && semantic_fraction <= 1.0))
            throw ConfigError("alignment: semantic_fraction must lie in [0,1]");
        if (!(rho_bg >= 0.0 && rho_sem <= 1.0 && rho_bg <= rho_sem))
            throw ConfigError("alignment: need 0 <= rho_bg <= rho_sem <= 1, got rho_bg=" +
                              std::to_string(rho_bg) + " rho_sem=" + std::to_string(rho_sem));
        if (!(norm_sem > 0.0 && norm_bg > 0.0))
            throw ConfigError("alignment: token norms must be positive");
        if (trials < 1) throw ConfigError("alignment: trials must be >= 1");
        if (!(gamma_base > 0.0 && gamma_base <= 1.0))
            throw ConfigError("alignment: gamma_base must lie in (0,1]");
        if (!(lambda >= 0.0)) throw ConfigError("alignment: lambda must be non-negative");
    }
};

struct AlignmentSummary {
    double improved_fraction = 0.0;  // trials with delta_cos > 0
    double mean_delta_cos = 0.0;
    std::vector<double> delta_cos;   // one entry per trial
};

namespace detail {

// Unit vector with an exact cosine of rho against the unit vector dir,
// using a random orthogonal complement.
inline void exact_cosine_vector(const std::vector<double>& dir, double rho, Rng& rng,
                                std::vector<double>& out) {
    std::size_t D = dir.size();
    out.resize(D);
    double proj = 0.0, norm = 0.0;
    do {
        for (double& v : out) v = rng.normal();
        proj = 0.0;
        for (std::size_t i = 0; i < D; ++i) proj += out[i] * dir[i];
        norm = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            out[i] -= proj * dir[i];
            norm += out[i] * out[i];
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-12);
    double s = std::sqrt(std::max(0.0, 1.0 - rho * rho)) / norm;
    for (std::size_t i = 0; i < D; ++i) out[i] = rho * dir[i] + s * out[i];
}

}  // namespace detail

inline AlignmentSummary theorem1_montecarlo(const AlignmentTrialConfig& cfg) {
    cfg.validate();
    int T = cfg.tokens, D = cfg.dim;
    int n_sem = static_cast<int>(std::llround(cfg.semantic_fraction * T));

    ModulationConfig mc;
    mc.gamma_base = cfg.gamma_base;
    mc.lambda_qkv = cfg.lambda;
    mc.early_set.clear();  // late-layer polarity: high importance scales up

    AlignmentSummary out;
    out.delta_cos.reserve(static_cast<std::size_t>(cfg.trials));
    Rng base(cfg.seed, 0);
    std::vector<double> dir(static_cast<std::size_t>(D));
    std::vector<double> gi;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        Rng rng = base.split(static_cast<std::uint64_t>(trial));
        double norm = 0.0;
        do {
            for (double& v : dir) v = rng.normal();
            norm = 0.0;
            for (double v : dir) norm += v * v;
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (double& v : dir) v /= norm;

        Tensor Z({T, D});
        Tensor gsum({D});
        for (int i = 0; i < T; ++i) {
            bool semantic = i < n_sem;
            detail::exact_cosine_vector(dir, semantic ? cfg.rho_sem : cfg.rho_bg, rng, gi);
            double scale = semantic ? cfg.norm_sem : cfg.norm_bg;
            for (int d = 0; d < D; ++d) {
                double v = scale * gi[static_cast<std::size_t>(d)];
                Z.at2(i, d) = v;
                gsum[static_cast<std::size_t>(d)] += v;
            }
        }

        TokenImportance imp = token_importance(Z, mc.eps_norm);
        ScaleVector sv = scale_factors(imp, /*l=*/5, ModuleTag::qkv, mc);
        bool uniform = true;
        for (double s : sv.s)
            if (s != sv.s[0]) uniform = false;
        double dc = 0.0;
        if (!uniform) {
            Tensor gscaled({D});
            for (int i = 0; i < T; ++i)
                for (int d = 0; d < D; ++d)
                    gscaled[static_cast<std::size_t>(d)] +=
                        sv.s[static_cast<std::size_t>(i)] * Z.at2(i, d);
            Tensor target({D});
            for (int d = 0; d < D; ++d) target[static_cast<std::size_t>(d)] = dir[static_cast<std::size_t>(d)];
            dc = cosine_alignment(gscaled, target).value - cosine_alignment(gsum, target).value;
        }
        // Uniform factors scale the sum without turning it, so the cosine
        // difference is exactly zero; recomputing it in floating point would
        // only add rounding noise.
        out.delta_cos.push_back(dc);
    }

    int improved = 0;
    double sum = 0.0;
    for (double dc : out.delta_cos) {
        if (dc > 0.0) ++improved;
        sum += dc;
    }
    out.improved_fraction = static_cast<double>(improved) / static_cast<double>(cfg.trials);
    out.mean_delta_cos = sum / static_cast<double>(cfg.trials);
    return out;
}

}  // namespace tesser
