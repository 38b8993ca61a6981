#pragma once

#include <cmath>
#include <cstdint>

#include "tesser/errors.hpp"
#include "tesser/tensor.hpp"

namespace tesser {

// ---------------------------------------------------------------------------
// GEMM cores. All matrices are row-major doubles. C is overwritten unless
// noted. Loop orders are chosen so the innermost loop streams contiguously.
// ---------------------------------------------------------------------------

// C[M,N] = A[M,K] * B[K,N]
inline void gemm_nn(const double* A, const double* B, double* C,
                    std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        double* crow = C + i * N;
        for (std::int64_t j = 0; j < N; ++j) crow[j] = 0.0;
        const double* arow = A + i * K;
        for (std::int64_t k = 0; k < K; ++k) {
            double a = arow[k];
            if (a == 0.0) continue;
            const double* brow = B + k * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[M,N] = A[M,K] * B[N,K]^T
inline void gemm_nt(const double* A, const double* B, double* C,
                    std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        const double* arow = A + i * K;
        double* crow = C + i * N;
        for (std::int64_t j = 0; j < N; ++j) {
            const double* brow = B + j * K;
            double s = 0.0;
            for (std::int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]  (accumulating: used for weight gradients)
inline void gemm_tn_acc(const double* A, const double* B, double* C,
                        std::int64_t K, std::int64_t M, std::int64_t N) {
    for (std::int64_t k = 0; k < K; ++k) {
        const double* arow = A + k * M;
        const double* brow = B + k * N;
        for (std::int64_t i = 0; i < M; ++i) {
            double a = arow[i];
            if (a == 0.0) continue;
            double* crow = C + i * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[M,N] = A[K,M]^T * B[K,N]
inline void gemm_tn(const double* A, const double* B, double* C,
                    std::int64_t K, std::int64_t M, std::int64_t N) {
    for (std::int64_t i = 0; i < M * N; ++i) C[i] = 0.0;
    gemm_tn_acc(A, B, C, K, M, N);
}

// ---------------------------------------------------------------------------
// Row-wise softmax.
// ---------------------------------------------------------------------------

inline void softmax_rows(const double* X, double* Y, std::int64_t R, std::int64_t C) {
    for (std::int64_t r = 0; r < R; ++r) {
        const double* x = X + r * C;
        double* y = Y + r * C;
        double m = x[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, x[c]);
        double sum = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - m);
            sum += y[c];
        }
        double inv = 1.0 / sum;
        for (std::int64_t c = 0; c < C; ++c) y[c] *= inv;
    }
}

// dX given Y = softmax(X) and dY:  dX_i = Y_i * (dY_i - sum_k dY_k Y_k)
inline void softmax_rows_backward(const double* Y, const double* dY, double* dX,
                                  std::int64_t R, std::int64_t C) {
    for (std::int64_t r = 0; r < R; ++r) {
        const double* y = Y + r * C;
        const double* dy = dY + r * C;
        double* dx = dX + r * C;
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) dot += dy[c] * y[c];
        for (std::int64_t c = 0; c < C; ++c) dx[c] = y[c] * (dy[c] - dot);
    }
}

inline Tensor softmax_rows(const Tensor& x) {
    require(x.rank() == 2, "softmax_rows: expected rank-2 tensor");
    Tensor y(x.shape);
    softmax_rows(x.ptr(), y.ptr(), x.dim(0), x.dim(1));
    return y;
}

// ---------------------------------------------------------------------------
// Row-wise layer norm with learned affine. Population variance; xhat and
// rstd are cached by the caller for the backward pass.
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-12;

inline void layernorm_rows(const double* X, const double* gamma, const double* beta,
                           double* Y, double* xhat, double* rstd,
                           std::int64_t R, std::int64_t C, double eps = kLayerNormEps) {
    for (std::int64_t r = 0; r < R; ++r) {
        const double* x = X + r * C;
        double* y = Y + r * C;
        double* xh = xhat + r * C;
        double mean = 0.0;
        for (std::int64_t c = 0; c < C; ++c) mean += x[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            double d = x[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::int64_t c = 0; c < C; ++c) {
            xh[c] = (x[c] - mean) * rs;
            y[c] = gamma[c] * xh[c] + beta[c];
        }
    }
}

// dX from cached xhat/rstd. dgamma/dbeta accumulate when non-null.
inline void layernorm_rows_backward(const double* dY, const double* xhat,
                                    const double* rstd, const double* gamma,
                                    double* dX, double* dgamma, double* dbeta,
                                    std::int64_t R, std::int64_t C) {
    for (std::int64_t r = 0; r < R; ++r) {
        const double* dy = dY + r * C;
        const double* xh = xhat + r * C;
        double* dx = dX + r * C;
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            double dxhat = dy[c] * gamma[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[c];
        }
        double invC = 1.0 / static_cast<double>(C);
        double rs = rstd[r];
        for (std::int64_t c = 0; c < C; ++c) {
            double dxhat = dy[c] * gamma[c];
            dx[c] = rs * (dxhat - invC * sum_dxhat - xh[c] * invC * sum_dxhat_xhat);
        }
        if (dgamma) {
            for (std::int64_t c = 0; c < C; ++c) dgamma[c] += dy[c] * xh[c];
        }
        if (dbeta) {
            for (std::int64_t c = 0; c < C; ++c) dbeta[c] += dy[c];
        }
    }
}

// ---------------------------------------------------------------------------
// Exact (erf-based) GELU.
// ---------------------------------------------------------------------------

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); // x / sqrt(2)
}

inline double gelu_grad(double x) {
    double phi_cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    double phi_pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x); // 1/sqrt(2*pi)
    return phi_cdf + x * phi_pdf;
}

inline void gelu_forward(const double* X, double* Y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) Y[i] = gelu(X[i]);
}

inline void gelu_backward(const double* X, const double* dY, double* dX, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dX[i] = dY[i] * gelu_grad(X[i]);
}

// ---------------------------------------------------------------------------
// Cross-entropy from logits. Stable log-sum-exp; gradient is
// softmax(z) - onehot(y).
// ---------------------------------------------------------------------------

inline double cross_entropy(const double* logits, std::int64_t n, std::int64_t label) {
    require(label >= 0 && label < n, "cross_entropy: label out of range");
    double m = logits[0];
    for (std::int64_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
    return m + std::log(sum) - logits[label];
}

inline void cross_entropy_grad(const double* logits, std::int64_t n, std::int64_t label,
                               double* grad) {
    require(label >= 0 && label < n, "cross_entropy_grad: label out of range");
    softmax_rows(logits, grad, 1, n);
    grad[label] -= 1.0;
}

inline void softmax_probs(const double* logits, std::int64_t n, double* probs) {
    softmax_rows(logits, probs, 1, n);
}

inline std::int64_t argmax(const double* v, std::int64_t n) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace tesser
