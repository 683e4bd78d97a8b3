#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>

#include "elib/error.hpp"
#include "elib/fp16.hpp"

namespace elib {

inline constexpr size_t kBlockLen = 32;

enum class Scheme : uint8_t {
    F32 = 0,
    F16 = 1,
    Q4_0 = 2,
    Q4_1 = 3,
    Q5_0 = 4,
    Q5_1 = 5,
    Q8_0 = 6,
};

inline constexpr std::array<Scheme, 5> kQuantSchemes = {
    Scheme::Q4_0, Scheme::Q4_1, Scheme::Q5_0, Scheme::Q5_1, Scheme::Q8_0};

inline bool is_quantized(Scheme s) {
    return s == Scheme::Q4_0 || s == Scheme::Q4_1 || s == Scheme::Q5_0 ||
           s == Scheme::Q5_1 || s == Scheme::Q8_0;
}

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::F32: return "f32";
        case Scheme::F16: return "f16";
        case Scheme::Q4_0: return "q4_0";
        case Scheme::Q4_1: return "q4_1";
        case Scheme::Q5_0: return "q5_0";
        case Scheme::Q5_1: return "q5_1";
        case Scheme::Q8_0: return "q8_0";
    }
    return "?";
}

inline Scheme scheme_from_name(const std::string& name) {
    for (Scheme s : {Scheme::F32, Scheme::F16, Scheme::Q4_0, Scheme::Q4_1,
                     Scheme::Q5_0, Scheme::Q5_1, Scheme::Q8_0}) {
        if (name == scheme_name(s)) return s;
    }
    throw CodecError("unknown quantization scheme: " + name);
}

inline Scheme scheme_from_tag(uint8_t tag) {
    if (tag > static_cast<uint8_t>(Scheme::Q8_0)) {
        throw CodecError("unknown scheme tag: " + std::to_string(tag));
    }
    return static_cast<Scheme>(tag);
}

/// Serialized size of one 32-element block.
inline size_t block_bytes(Scheme s) {
    switch (s) {
        case Scheme::Q4_0: return 18;  // f16 delta + 16 nibble bytes
        case Scheme::Q4_1: return 20;  // + f16 min
        case Scheme::Q5_0: return 22;  // + 4-byte high-bit plane
        case Scheme::Q5_1: return 24;
        case Scheme::Q8_0: return 34;  // f16 delta + 32 code bytes
        default:
            throw CodecError(std::string("block_bytes: not a block scheme: ") + scheme_name(s));
    }
}

/// Storage cost per weight including scale/offset overhead.
inline double effective_bits_per_weight(Scheme s) {
    return static_cast<double>(block_bytes(s)) * 8.0 / static_cast<double>(kBlockLen);
}

/// Nominal code width, the accounting used by the qX_Y naming.
inline int nominal_bits_per_weight(Scheme s) {
    switch (s) {
        case Scheme::Q4_0:
        case Scheme::Q4_1: return 4;
        case Scheme::Q5_0:
        case Scheme::Q5_1: return 5;
        case Scheme::Q8_0: return 8;
        default:
            throw CodecError("nominal_bits_per_weight: not a quantized scheme");
    }
}

namespace detail {

struct SchemeLayout {
    int bias;        // midpoint added to the signed quantum (symmetric schemes)
    int half_range;  // divisor for delta = amax / half_range
    int max_code;
    bool has_min;
    bool has_high_bits;
};

inline SchemeLayout layout(Scheme s) {
    switch (s) {
        case Scheme::Q4_0: return {8, 8, 15, false, false};
        case Scheme::Q4_1: return {0, 0, 15, true, false};
        case Scheme::Q5_0: return {16, 16, 31, false, true};
        case Scheme::Q5_1: return {0, 0, 31, true, true};
        case Scheme::Q8_0: return {128, 127, 255, false, false};
        default: throw CodecError("not a block scheme");
    }
}

// round-half-away-from-zero, the codec's fixed rounding mode
inline int round_code(float x) { return static_cast<int>(std::round(x)); }

}  // namespace detail

/// One decoded 32-element block. `codes` holds the stored unsigned values.
struct QuantBlock {
    Scheme scheme = Scheme::Q4_0;
    float delta = 0.0f;  // already rounded through f16
    float min = 0.0f;    // only meaningful for the _1 variants
    std::array<uint8_t, kBlockLen> codes{};
};

inline QuantBlock quantize_block(Scheme scheme, std::span<const float> values) {
    if (!is_quantized(scheme)) {
        throw CodecError(std::string("quantize_block: scheme is not quantized: ") + scheme_name(scheme));
    }
    if (values.size() != kBlockLen) {
        throw CodecError("quantize_block: expected 32 values, got " + std::to_string(values.size()));
    }
    for (float v : values) {
        if (!std::isfinite(v)) throw CodecError("quantize_block: non-finite input value");
    }

    const auto lay = detail::layout(scheme);
    QuantBlock block;
    block.scheme = scheme;

    if (lay.has_min) {
        float lo = values[0], hi = values[0];
        for (float v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const float delta = (hi - lo) / static_cast<float>(lay.max_code);
        block.delta = f16_round(delta);
        block.min = f16_round(lo);
        if (block.delta != 0.0f) {
            for (size_t i = 0; i < kBlockLen; ++i) {
                const int q = detail::round_code((values[i] - block.min) / block.delta);
                block.codes[i] = static_cast<uint8_t>(std::clamp(q, 0, lay.max_code));
            }
        }
    } else {
        float amax = 0.0f;
        for (float v : values) amax = std::max(amax, std::fabs(v));
        block.delta = f16_round(amax / static_cast<float>(lay.half_range));
        if (block.delta == 0.0f) {
            block.codes.fill(static_cast<uint8_t>(lay.bias));
        } else {
            for (size_t i = 0; i < kBlockLen; ++i) {
                const int q = detail::round_code(values[i] / block.delta) + lay.bias;
                block.codes[i] = static_cast<uint8_t>(std::clamp(q, 0, lay.max_code));
            }
        }
    }
    return block;
}

inline void dequantize_block(const QuantBlock& block, std::span<float> out) {
    if (out.size() != kBlockLen) throw CodecError("dequantize_block: output must hold 32 values");
    const auto lay = detail::layout(block.scheme);
    if (lay.has_min) {
        for (size_t i = 0; i < kBlockLen; ++i) {
            out[i] = block.delta * static_cast<float>(block.codes[i]) + block.min;
        }
    } else {
        for (size_t i = 0; i < kBlockLen; ++i) {
            out[i] = block.delta * static_cast<float>(static_cast<int>(block.codes[i]) - lay.bias);
        }
    }
}

// Wire layout, little-endian:
//   [delta f16][min f16 if _1][high-bit plane u32 if q5_x][packed codes]
// Nibble packing: element i sits in the low nibble of byte i for i < 16 and in
// the high nibble of byte i-16 otherwise. Bit i of the q5 plane is element i's
// fifth bit.

namespace detail {

inline void store_u16(uint8_t* dst, uint16_t v) {
    dst[0] = static_cast<uint8_t>(v & 0xff);
    dst[1] = static_cast<uint8_t>(v >> 8);
}

inline uint16_t load_u16(const uint8_t* src) {
    return static_cast<uint16_t>(src[0] | (src[1] << 8));
}

inline void store_u32(uint8_t* dst, uint32_t v) {
    for (int i = 0; i < 4; ++i) dst[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
}

inline uint32_t load_u32(const uint8_t* src) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(src[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void encode_block(const QuantBlock& block, uint8_t* dst) {
    const auto lay = detail::layout(block.scheme);
    uint8_t* p = dst;
    detail::store_u16(p, f32_to_f16(block.delta));
    p += 2;
    if (lay.has_min) {
        detail::store_u16(p, f32_to_f16(block.min));
        p += 2;
    }
    if (lay.has_high_bits) {
        uint32_t plane = 0;
        for (size_t i = 0; i < kBlockLen; ++i) {
            plane |= static_cast<uint32_t>((block.codes[i] >> 4) & 1u) << i;
        }
        detail::store_u32(p, plane);
        p += 4;
    }
    if (block.scheme == Scheme::Q8_0) {
        for (size_t i = 0; i < kBlockLen; ++i) p[i] = block.codes[i];
    } else {
        for (size_t i = 0; i < 16; ++i) {
            p[i] = static_cast<uint8_t>((block.codes[i] & 0x0f) |
                                        ((block.codes[i + 16] & 0x0f) << 4));
        }
    }
}

inline QuantBlock decode_block(Scheme scheme, const uint8_t* src) {
    const auto lay = detail::layout(scheme);
    QuantBlock block;
    block.scheme = scheme;
    const uint8_t* p = src;
    block.delta = f16_to_f32(detail::load_u16(p));
    p += 2;
    if (lay.has_min) {
        block.min = f16_to_f32(detail::load_u16(p));
        p += 2;
    }
    uint32_t plane = 0;
    if (lay.has_high_bits) {
        plane = detail::load_u32(p);
        p += 4;
    }
    if (scheme == Scheme::Q8_0) {
        for (size_t i = 0; i < kBlockLen; ++i) block.codes[i] = p[i];
    } else {
        for (size_t i = 0; i < 16; ++i) {
            block.codes[i] = static_cast<uint8_t>(p[i] & 0x0f);
            block.codes[i + 16] = static_cast<uint8_t>(p[i] >> 4);
        }
        if (lay.has_high_bits) {
            for (size_t i = 0; i < kBlockLen; ++i) {
                block.codes[i] = static_cast<uint8_t>(block.codes[i] | (((plane >> i) & 1u) << 4));
            }
        }
    }
    return block;
}

/// Decode 32 values straight from wire bytes.
inline void dequantize_block_bytes(Scheme scheme, const uint8_t* src, float* out) {
    const QuantBlock block = decode_block(scheme, src);
    dequantize_block(block, std::span<float>(out, kBlockLen));
}

inline void quantize_block_bytes(Scheme scheme, const float* values, uint8_t* dst) {
    encode_block(quantize_block(scheme, std::span<const float>(values, kBlockLen)), dst);
}

}  // namespace elib
