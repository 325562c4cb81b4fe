#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "awq_edge/half.hpp"
#include "awq_edge/tensor.hpp"

namespace awq_edge {

class QuantizationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kInt4Max = 15;

// One group of GS consecutive input-channel weights of a single output channel.
struct QuantGroup {
    std::vector<std::uint8_t> codes;  // each in [0, 15]
    Half scale;                       // > 0
    std::uint8_t zero = 0;            // in [0, 15]

    friend bool operator==(const QuantGroup&, const QuantGroup&) = default;
};

// Groups run along the input dimension: group (o, g) covers
// W[o][g*group_size, (g+1)*group_size) and is stored at index o * groups_per_row + g.
struct QuantizedTensor {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t group_size = 0;
    std::vector<QuantGroup> groups;
    // Present when the weights were multiplied column-wise before grouping;
    // activations must be divided by it at runtime. Values are half-representable.
    std::optional<std::vector<float>> awq_channel_scale;

    std::size_t groups_per_row() const { return in_channels / group_size; }
    const QuantGroup& group(std::size_t out, std::size_t g) const
    {
        return groups[out * groups_per_row() + g];
    }
    QuantGroup& group(std::size_t out, std::size_t g)
    {
        return groups[out * groups_per_row() + g];
    }

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

// Asymmetric round-to-nearest over [min(w,0), max(w,0)]; the scale is rounded to
// half precision before codes are computed. An all-zero group gets the minimal
// positive half scale and zero point 8.
QuantGroup quantize_group(std::span<const float> w);

// (code - zero) * scale, scale widened to FP32.
std::vector<float> dequantize_group(const QuantGroup& g);

// Half-away-from-zero rounding used for every code/zero computation.
float round_half_away(float v);

QuantizedTensor quantize_tensor(const TensorF32& weight, std::size_t group_size,
                                std::optional<std::span<const float>> channel_scale = {});

// Dequantized weights in the scaled domain ((q - z) * s, no channel-scale division).
TensorF32 dequantize_tensor(const QuantizedTensor& t);

// Dequantized weights mapped back to the original domain (columns divided by the
// AWQ channel scale when present).
TensorF32 effective_weight(const QuantizedTensor& t);

struct AwqSearchResult {
    std::vector<float> scales;
    double alpha = 0.0;
    double mse = 0.0;
    std::vector<double> alpha_mse;  // parallel to the searched grid
};

std::vector<double> default_alpha_grid();

// Per-input-channel scaling search: for each alpha in the grid, s = (m / geomean(m))^alpha
// where m is the mean absolute calibration activation per channel; picks the alpha with
// the lowest output MSE after quantization. Ties go to the smaller alpha.
AwqSearchResult awq_search_channel_scales(const TensorF32& weight,
                                          const TensorF32& calib_activations,
                                          std::span<const double> alpha_grid,
                                          std::size_t group_size);

// Output MSE between calib * W^T and (calib / s) * What^T for a given candidate scale.
double awq_output_mse(const TensorF32& weight, const TensorF32& calib_activations,
                      std::span<const float> scales, std::size_t group_size);

}  // namespace awq_edge
