#pragma once

#include <cstddef>
#include <cstdint>

#include "awq_edge/config.hpp"
#include "awq_edge/model_file.hpp"

namespace awq_edge {

// Seeded pseudo-random FP16 model for the given architecture, with every tensor
// stored unquantized (config.quantized_tensors is cleared in the result).
ModelFile synthesize_fp16_model(ModelConfig config, std::uint64_t seed);

struct QuantizeOptions {
    std::size_t group_size = 64;
    bool awq_scale = false;
    std::size_t calib_samples = 32;
    std::uint64_t seed = 0;  // calibration-activation generator
    std::size_t channels = 4;
};

// Quantizes the listed tensors of an FP16 model (all projections if `names` is empty)
// into AWQ_MACRO streams.
ModelFile quantize_model(const ModelFile& fp16, const QuantizeOptions& opts,
                         const std::vector<std::string>& names = {});

// Calibration activations with log-spread per-channel magnitudes, [samples x channels].
TensorF32 synthetic_calibration(std::size_t samples, std::size_t channels, std::uint64_t seed);

}  // namespace awq_edge
