#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tesser/errors.hpp"

namespace tesser {

// Dense row-major n-dimensional array of doubles. Values are kept at 64-bit
// precision everywhere inside the library; checkpoints quantize to f32.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> dims) : shape(std::move(dims)) {
        for (auto d : shape) require(d > 0, "Tensor: dimension sizes must be positive");
        data.assign(static_cast<std::size_t>(numel()), 0.0);
    }

    Tensor(std::vector<std::int64_t> dims, std::vector<double> values)
        : shape(std::move(dims)), data(std::move(values)) {
        for (auto d : shape) require(d > 0, "Tensor: dimension sizes must be positive");
        require(static_cast<std::int64_t>(data.size()) == numel(),
                "Tensor: data length does not match shape");
    }

    std::int64_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                               std::multiplies<>());
    }

    int rank() const { return static_cast<int>(shape.size()); }

    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // 2-D convenience accessors (row-major).
    double& at2(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    double at2(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void zero() { fill(0.0); }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

inline void require_shape(const Tensor& t, const std::vector<std::int64_t>& shape,
                          const std::string& what) {
    require(t.shape == shape, what + ": unexpected shape " + shape_str(t));
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double linf_norm(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
}

inline double l1_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += std::abs(v);
    return s;
}

inline double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

inline double dot(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "sub: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline void axpy(double c, const Tensor& x, Tensor& y) {
    require(x.same_shape(y), "axpy: shape mismatch");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += c * x.data[i];
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace tesser
