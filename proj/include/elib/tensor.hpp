#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "elib/error.hpp"
#include "elib/fp16.hpp"
#include "elib/quant.hpp"

namespace elib {

/// A named row-major tensor. The payload is either raw f32/f16 values or a
/// contiguous run of quantized blocks along the innermost dimension.
struct Tensor {
    std::string name;
    std::vector<uint32_t> dims;  // row-major, dims.back() is innermost
    Scheme scheme = Scheme::F32;
    std::vector<uint8_t> data;

    size_t elements() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    size_t rows() const { return dims.empty() ? 0 : elements() / dims.back(); }
    size_t cols() const { return dims.empty() ? 0 : dims.back(); }

    size_t payload_bytes() const { return data.size(); }

    static size_t expected_bytes(Scheme scheme, size_t elements) {
        switch (scheme) {
            case Scheme::F32: return elements * 4;
            case Scheme::F16: return elements * 2;
            default: return elements / kBlockLen * block_bytes(scheme);
        }
    }

    const float* f32() const {
        if (scheme != Scheme::F32) throw CodecError("tensor " + name + " is not f32");
        return reinterpret_cast<const float*>(data.data());
    }
    float* f32() {
        if (scheme != Scheme::F32) throw CodecError("tensor " + name + " is not f32");
        return reinterpret_cast<float*>(data.data());
    }

    /// Decode one innermost-dimension row into `out` (cols() floats).
    void load_row(size_t row, float* out) const {
        const size_t n = cols();
        switch (scheme) {
            case Scheme::F32:
                std::memcpy(out, data.data() + row * n * 4, n * 4);
                break;
            case Scheme::F16: {
                const uint8_t* src = data.data() + row * n * 2;
                for (size_t i = 0; i < n; ++i) {
                    out[i] = f16_to_f32(detail::load_u16(src + i * 2));
                }
                break;
            }
            default: {
                const size_t bb = block_bytes(scheme);
                const size_t blocks = n / kBlockLen;
                const uint8_t* src = data.data() + row * blocks * bb;
                for (size_t b = 0; b < blocks; ++b) {
                    dequantize_block_bytes(scheme, src + b * bb, out + b * kBlockLen);
                }
                break;
            }
        }
    }
};

inline Tensor make_f32_tensor(std::string name, std::vector<uint32_t> dims) {
    Tensor t;
    t.name = std::move(name);
    t.dims = std::move(dims);
    t.scheme = Scheme::F32;
    t.data.resize(t.elements() * 4);
    return t;
}

/// Re-encode an f32 tensor under `scheme`. Identity for F32.
inline Tensor quantize_tensor(const Tensor& src, Scheme scheme) {
    if (src.scheme != Scheme::F32) {
        throw CodecError("quantize_tensor: source tensor " + src.name + " must be f32");
    }
    if (scheme == Scheme::F32) return src;

    Tensor out;
    out.name = src.name;
    out.dims = src.dims;
    out.scheme = scheme;
    const size_t n = src.elements();
    const float* values = src.f32();

    if (scheme == Scheme::F16) {
        out.data.resize(n * 2);
        for (size_t i = 0; i < n; ++i) {
            detail::store_u16(out.data.data() + i * 2, f32_to_f16(values[i]));
        }
        return out;
    }

    if (src.dims.empty() || src.dims.back() % kBlockLen != 0) {
        throw CodecError("tensor " + src.name +
                         ": innermost dimension not divisible by 32, cannot quantize");
    }
    const size_t bb = block_bytes(scheme);
    const size_t blocks = n / kBlockLen;
    out.data.resize(blocks * bb);
    for (size_t b = 0; b < blocks; ++b) {
        quantize_block_bytes(scheme, values + b * kBlockLen, out.data.data() + b * bb);
    }
    return out;
}

/// Materialize any tensor as f32.
inline Tensor dequantize_tensor(const Tensor& src) {
    if (src.scheme == Scheme::F32) return src;
    Tensor out = make_f32_tensor(src.name, src.dims);
    const size_t rows = src.rows();
    for (size_t r = 0; r < rows; ++r) {
        src.load_row(r, out.f32() + r * src.cols());
    }
    return out;
}

}  // namespace elib
