#include "awq_edge/half.hpp"

#include <bit>

namespace awq_edge {

Half to_half(float value)
{
    const std::uint32_t f = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (f >> 16) & 0x8000u;
    const std::uint32_t abs = f & 0x7fffffffu;

    if (abs >= 0x7f800000u) {  // inf or nan
        const std::uint32_t mant = abs > 0x7f800000u ? 0x0200u : 0u;
        return Half{static_cast<std::uint16_t>(sign | 0x7c00u | mant)};
    }
    if (abs >= 0x477ff000u) {  // rounds past 65504
        return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};
    }
    if (abs < 0x38800000u) {  // below 2^-14: subnormal half or zero
        if (abs < 0x33000000u) {  // below 2^-25 rounds to zero
            return Half{static_cast<std::uint16_t>(sign)};
        }
        const std::uint32_t exp = abs >> 23;
        const std::uint32_t mant = (abs & 0x7fffffu) | 0x800000u;
        const std::uint32_t shift = 126u - exp;  // 14..24
        std::uint32_t h = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1u);
        if (rem > halfway || (rem == halfway && (h & 1u))) {
            ++h;
        }
        return Half{static_cast<std::uint16_t>(sign | h)};
    }
    // normal range; a mantissa carry correctly bumps the exponent
    std::uint32_t h = ((abs - 0x38000000u) >> 13);
    const std::uint32_t rem = abs & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) {
        ++h;
    }
    return Half{static_cast<std::uint16_t>(sign | h)};
}

float to_float(Half h)
{
    const std::uint32_t sign = (static_cast<std::uint32_t>(h.bits) & 0x8000u) << 16;
    const std::uint32_t exp = (h.bits >> 10) & 0x1fu;
    std::uint32_t mant = h.bits & 0x3ffu;

    std::uint32_t f;
    if (exp == 0) {
        if (mant == 0) {
            f = sign;
        } else {
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            f = sign | ((112u - e) << 23) | ((mant & 0x3ffu) << 13);
        }
    } else if (exp == 0x1f) {
        f = sign | 0x7f800000u | (mant << 13);
    } else {
        f = sign | ((exp + 112u) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(f);
}

}  // namespace awq_edge
