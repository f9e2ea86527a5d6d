#pragma once

// Minimal dense float32 math for the forward pass. Everything here is a pure
// function with a fixed accumulation order, so results are bit-reproducible
// across runs and thread counts.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "steer/common.hpp"

namespace steer {

// Row-major 2-D float tensor.
struct Tensor2 {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;

    Tensor2() = default;
    Tensor2(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0f) {}
    Tensor2(int64_t r, int64_t c, std::vector<float> d) : rows(r), cols(c), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != rows * cols) {
            throw Error(ErrorKind::dimension_mismatch, "Tensor2: data length != rows*cols");
        }
    }

    float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }

    std::span<float> row(int64_t r) { return {data.data() + r * cols, static_cast<size_t>(cols)}; }
    std::span<const float> row(int64_t r) const {
        return {data.data() + r * cols, static_cast<size_t>(cols)};
    }

    bool operator==(const Tensor2& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline Tensor2 identity(int64_t n) {
    Tensor2 t(n, n);
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

// Standard matrix product with an ascending k-loop; no blocking, no reordering.
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.rows) {
        throw Error(ErrorKind::dimension_mismatch,
                    "matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                        std::to_string(b.rows) + ")");
    }
    Tensor2 out(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < b.cols; ++j) {
            float acc = 0.0f;
            for (int64_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

// Row-wise softmax with max subtraction.
inline Tensor2 softmax_rows(const Tensor2& a) {
    Tensor2 out(a.rows, a.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        float mx = a.at(i, 0);
        for (int64_t j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
        float sum = 0.0f;
        for (int64_t j = 0; j < a.cols; ++j) {
            const float e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        const float inv = 1.0f / sum;
        for (int64_t j = 0; j < a.cols; ++j) out.at(i, j) *= inv;
    }
    return out;
}

// RMS normalization: x * gain / sqrt(mean(x^2) + eps). A zero denominator
// (all-zero x with eps == 0) yields zeros rather than NaN so the finiteness
// invariant holds for any finite input.
inline std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain,
                                  float eps) {
    if (x.size() != gain.size()) {
        throw Error(ErrorKind::dimension_mismatch, "rmsnorm: x and gain lengths differ");
    }
    float ms = 0.0f;
    for (float v : x) ms += v * v;
    ms /= static_cast<float>(x.size());
    const float denom = ms + eps;
    const float scale = denom > 0.0f ? 1.0f / std::sqrt(denom) : 0.0f;
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scale * gain[i];
    return out;
}

// In-place y += a * x over equal-length spans.
inline void axpy(float a, std::span<const float> x, std::span<float> y) {
    if (x.size() != y.size()) {
        throw Error(ErrorKind::dimension_mismatch, "axpy: lengths differ");
    }
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline float norm2(std::span<const float> a) { return std::sqrt(dot(a, a)); }

inline float cosine(std::span<const float> a, std::span<const float> b) {
    const float na = norm2(a);
    const float nb = norm2(b);
    if (na == 0.0f || nb == 0.0f) return 0.0f;
    return dot(a, b) / (na * nb);
}

}  // namespace steer
