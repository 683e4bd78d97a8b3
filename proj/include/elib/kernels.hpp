#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "elib/error.hpp"
#include "elib/tensor.hpp"

namespace elib {

using FlopCounter = std::atomic<uint64_t>;

enum class Backend { naive, threaded };

inline const char* backend_name(Backend b) { return b == Backend::naive ? "naive" : "threaded"; }

inline Backend backend_from_name(const std::string& name) {
    if (name == "naive") return Backend::naive;
    if (name == "threaded") return Backend::threaded;
    throw ConfigError("unknown backend: " + name);
}

/// Kernel execution plan. The naive backend is the single-thread fallback and
/// computes bit-identical results to the threaded one.
struct ExecPlan {
    Backend backend = Backend::threaded;
    int threads = 4;

    int worker_count() const { return backend == Backend::naive ? 1 : std::max(1, threads); }
};

namespace detail {

template <class Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n < 2) {
        fn(size_t{0}, n);
        return;
    }
    const size_t w = std::min<size_t>(static_cast<size_t>(workers), n);
    const size_t chunk = (n + w - 1) / w;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (size_t t = 0; t < w; ++t) {
        const size_t begin = t * chunk;
        const size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Read-only matrix view over either raw f32 data or a (possibly quantized)
/// tensor. Rows decode on demand.
struct ConstMat {
    size_t n_rows = 0;
    size_t n_cols = 0;
    const float* raw = nullptr;
    const Tensor* tensor = nullptr;

    static ConstMat from_f32(const float* data, size_t rows, size_t cols) {
        return ConstMat{rows, cols, data, nullptr};
    }
    static ConstMat from_tensor(const Tensor& t) {
        ConstMat m;
        m.n_rows = t.rows();
        m.n_cols = t.cols();
        if (t.scheme == Scheme::F32) {
            m.raw = t.f32();
        } else {
            m.tensor = &t;
        }
        return m;
    }

    bool direct() const { return raw != nullptr; }
    const float* row_f32(size_t r) const { return raw + r * n_cols; }
    void load_row(size_t r, float* out) const {
        if (raw) {
            std::memcpy(out, raw + r * n_cols, n_cols * sizeof(float));
        } else {
            tensor->load_row(r, out);
        }
    }
};

/// y = W x for W (rows x cols). Per-row reduction order is fixed, so results
/// are identical for any worker count. Adds 2*rows*cols to `flops`.
inline void matvec(const ConstMat& W, const float* x, float* y, const ExecPlan& plan,
                   FlopCounter* flops = nullptr) {
    detail::parallel_for(W.n_rows, plan.worker_count(), [&](size_t begin, size_t end) {
        if (W.direct()) {
            for (size_t r = begin; r < end; ++r) {
                const float* row = W.row_f32(r);
                float acc = 0.0f;
                for (size_t c = 0; c < W.n_cols; ++c) acc += row[c] * x[c];
                y[r] = acc;
            }
        } else {
            const Tensor& t = *W.tensor;
            const size_t bb = block_bytes(t.scheme);
            const size_t blocks = W.n_cols / kBlockLen;
            float buf[kBlockLen];
            for (size_t r = begin; r < end; ++r) {
                const uint8_t* src = t.data.data() + r * blocks * bb;
                float acc = 0.0f;
                for (size_t b = 0; b < blocks; ++b) {
                    dequantize_block_bytes(t.scheme, src + b * bb, buf);
                    const float* xs = x + b * kBlockLen;
                    for (size_t i = 0; i < kBlockLen; ++i) acc += buf[i] * xs[i];
                }
                y[r] = acc;
            }
        }
    });
    if (flops) *flops += 2ull * W.n_rows * W.n_cols;
}

/// y = W^T x for W (rows x cols): y[j] = sum_i W[i][j] * x[i]. Used for
/// weights stored transposed. The per-output reduction runs over i in fixed
/// ascending order, so results are identical for any worker count.
/// Adds 2*rows*cols to `flops`.
inline void matvec_t(const ConstMat& W, const float* x, float* y, const ExecPlan& plan,
                     FlopCounter* flops = nullptr) {
    detail::parallel_for(W.n_cols, plan.worker_count(), [&](size_t begin, size_t end) {
        for (size_t j = begin; j < end; ++j) y[j] = 0.0f;
        std::vector<float> rowbuf;
        if (!W.direct()) rowbuf.resize(W.n_cols);
        for (size_t r = 0; r < W.n_rows; ++r) {
            const float* row;
            if (W.direct()) {
                row = W.row_f32(r);
            } else {
                W.load_row(r, rowbuf.data());
                row = rowbuf.data();
            }
            const float xr = x[r];
            for (size_t j = begin; j < end; ++j) y[j] += row[j] * xr;
        }
    });
    if (flops) *flops += 2ull * W.n_rows * W.n_cols;
}

/// C = A B for A (m x k, f32) and B (k x n). B rows decode on the fly when
/// quantized. Reduction runs over l in fixed order per output row, so the
/// result does not depend on the worker count. Adds 2*m*k*n to `flops`.
inline void matmul(const float* A, size_t m, size_t k, const ConstMat& B, float* C,
                   const ExecPlan& plan, FlopCounter* flops = nullptr) {
    if (B.n_rows != k) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(k) + " vs " +
                         std::to_string(B.n_rows) + ")");
    }
    const size_t n = B.n_cols;
    detail::parallel_for(m, plan.worker_count(), [&](size_t begin, size_t end) {
        std::vector<float> rowbuf;
        if (!B.direct()) rowbuf.resize(n);
        for (size_t i = begin; i < end; ++i) {
            float* c = C + i * n;
            for (size_t j = 0; j < n; ++j) c[j] = 0.0f;
            for (size_t l = 0; l < k; ++l) {
                const float a = A[i * k + l];
                const float* brow;
                if (B.direct()) {
                    brow = B.row_f32(l);
                } else {
                    B.load_row(l, rowbuf.data());
                    brow = rowbuf.data();
                }
                for (size_t j = 0; j < n; ++j) c[j] += a * brow[j];
            }
        }
    });
    if (flops) *flops += 2ull * m * k * n;
}

/// Row-wise softmax of X (rows x cols), logits scaled by `scale` first.
/// Max subtraction keeps the exponentials in range.
inline void softmax_rows(float* X, size_t rows, size_t cols, float scale = 1.0f) {
    for (size_t r = 0; r < rows; ++r) {
        float* row = X + r * cols;
        float maxv = row[0] * scale;
        for (size_t c = 0; c < cols; ++c) maxv = std::max(maxv, row[c] * scale);
        float sum = 0.0f;
        for (size_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] * scale - maxv);
            sum += row[c];
        }
        const float inv = 1.0f / sum;
        for (size_t c = 0; c < cols; ++c) row[c] *= inv;
    }
}

inline void rmsnorm(const float* x, const float* gain, float* out, size_t n, float eps) {
    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) ss += static_cast<double>(x[i]) * x[i];
    const float inv = 1.0f / std::sqrt(static_cast<float>(ss / static_cast<double>(n)) + eps);
    for (size_t i = 0; i < n; ++i) out[i] = x[i] * inv * (gain ? gain[i] : 1.0f);
}

/// Rotary embedding over one head vector: adjacent pairs (2i, 2i+1) rotated by
/// position * base^(-2i/dim). Position 0 is the identity.
inline void rope_apply(float* head, size_t head_dim, size_t position, float base) {
    for (size_t i = 0; i * 2 < head_dim; ++i) {
        const double freq = std::pow(static_cast<double>(base),
                                     -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(position) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float x0 = head[2 * i];
        const float x1 = head[2 * i + 1];
        head[2 * i] = x0 * c - x1 * s;
        head[2 * i + 1] = x0 * s + x1 * c;
    }
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

}  // namespace elib
