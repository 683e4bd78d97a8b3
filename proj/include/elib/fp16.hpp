#pragma once

#include <bit>
#include <cstdint>

namespace elib {

/// IEEE 754 binary16 conversion, round-to-nearest-even on the way down.
inline uint16_t f32_to_f16(float value) {
    uint32_t f = std::bit_cast<uint32_t>(value);
    const uint32_t sign = f & 0x80000000u;
    f ^= sign;

    uint16_t out;
    if (f >= ((127u + 16u) << 23)) {
        // overflows half range: inf, or nan if the source was nan
        out = (f > (255u << 23)) ? 0x7e00 : 0x7c00;
    } else if (f < (113u << 23)) {
        // maps to a half subnormal; the float add performs the rounding
        const uint32_t denorm_magic = ((127u - 15u) + (23u - 10u) + 1u) << 23;
        f = std::bit_cast<uint32_t>(std::bit_cast<float>(f) + std::bit_cast<float>(denorm_magic));
        out = static_cast<uint16_t>(f - denorm_magic);
    } else {
        const uint32_t mant_odd = (f >> 13) & 1u;
        f += 0xC8000FFFu;  // rebias exponent (15-127)<<23 plus round bias
        f += mant_odd;     // round to even on ties
        out = static_cast<uint16_t>(f >> 13);
    }
    return static_cast<uint16_t>(out | (sign >> 16));
}

inline float f16_to_f32(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t f;
    if (exp == 0) {
        if (mant == 0) {
            f = sign;
        } else {
            exp = 113;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            f = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 31) {
        f = sign | 0x7f800000u | (mant << 13);
    } else {
        f = sign | ((exp + 112u) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(f);
}

/// Round a float through half precision (what a stored scale decodes back to).
inline float f16_round(float value) { return f16_to_f32(f32_to_f16(value)); }

}  // namespace elib
