#pragma once

#include <cstdint>

namespace awq_edge {

// IEEE 754 binary16 storage type. Arithmetic always happens in FP32.
struct Half {
    std::uint16_t bits = 0;

    friend bool operator==(Half, Half) = default;
};

// Round-to-nearest-even conversion, including subnormals; overflow saturates
// to +/-inf like a hardware converter.
Half to_half(float value);
float to_float(Half h);

inline float round_to_half(float value) { return to_float(to_half(value)); }

// Smallest positive subnormal, 2^-24.
inline constexpr Half kHalfMinPositive{0x0001};
inline constexpr float kHalfMax = 65504.0f;

}  // namespace awq_edge
