#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "awq_edge/config.hpp"
#include "awq_edge/decoder.hpp"
#include "awq_edge/trace.hpp"

namespace awq_edge {

// Target accelerator and memory system.
struct HwParams {
    double mem_bandwidth = 19.2e9;  // bytes/s
    double accel_freq = 200e6;      // Hz
    std::size_t channels = 4;
    std::size_t strip_bits = 128;
    std::size_t pe_rows = 8;
    std::size_t pe_cols = 8;
    double ps_overhead_per_token = 0.0;  // seconds of host-side work per token
    double cycles_per_tile = 1.0;        // steady-state initiation interval of the PE array
    double pipeline_fill_cycles = 0.0;   // paid once per streamed tensor
};

void validate_hw(const HwParams& hw);

struct Stage {
    enum class Kind { Prefill, Decode };
    Kind kind = Kind::Decode;
    std::size_t tokens = 1;

    static Stage prefill(std::size_t n) { return {Kind::Prefill, n}; }
    static Stage decode() { return {Kind::Decode, 1}; }
};

struct ThroughputEstimate {
    double tokens_per_s = 0.0;
    double bytes_streamed = 0.0;  // weight bytes streamed for the stage
    double memory_time_s = 0.0;
    double compute_time_s = 0.0;
    bool memory_bound = false;
};

// Bytes of AWQ_MACRO streams (plus channel-scale sections) touched by one forward pass.
std::size_t streamed_bytes_per_token(const ModelConfig& config);
// PE-array cycles for one token on the busiest channel, summed over quantized tensors.
double accelerator_cycles_per_token(const ModelConfig& config, const HwParams& hw);

// Roofline upper bound: per token max(memory time, compute time) + host overhead.
// Prefill streams the weights once for all n prompt tokens.
ThroughputEstimate estimate_throughput(const ModelConfig& config, const HwParams& hw, Stage stage);
double decode_bandwidth_bound(const ModelConfig& config, const HwParams& hw);

struct RatioPair {
    double value = 0.0;
    double max = 0.0;
};

struct ScoreInputs {
    RatioPair accuracy;
    RatioPair memory;
    RatioPair throughput_prefill;
    RatioPair throughput_decode;
};

class ScoreError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kAccuracyWeight = 0.4;
inline constexpr double kMemoryWeight = 0.2;
inline constexpr double kPrefillWeight = 0.2;
inline constexpr double kDecodeWeight = 0.2;

// 0.4*acc/max + 0.2*mem/max + 0.2*prefill/max + 0.2*decode/max.
double score(const ScoreInputs& inputs);

struct CompressionReport {
    std::size_t original_bytes = 0;  // every parameter in FP16
    std::size_t packed_bytes = 0;    // weights file size, header included
    double reduction_percent = 0.0;
    std::size_t quantized_original_bytes = 0;  // FP16 bytes of the quantized tensors
    std::size_t quantized_packed_bytes = 0;    // their packed payload
    double quantized_reduction_percent = 0.0;
};

CompressionReport compression_report(std::span<const TensorSpec> manifest, std::size_t group_size,
                                     bool awq_scales);
CompressionReport compression_report(const ModelConfig& config);

struct PerfRow {
    OpKind kind;
    std::string description;
    double time_us = 0.0;
    double percentage = 0.0;
    std::uint64_t flops = 0;
    bool mac = false;
};

struct PerfReport {
    std::vector<PerfRow> rows;  // taxonomy order
    double total_time_us = 0.0;
    std::uint64_t total_flops = 0;
    double mac_time_percent = 0.0;
    double mac_flop_percent = 0.0;
    std::size_t prompt_tokens = 0;
    std::size_t new_tokens = 0;
    std::size_t runs = 0;
    double measured_tokens_per_s = 0.0;  // host, best run
    double streamed_bytes_per_token = 0.0;
    ThroughputEstimate prefill_estimate;
    ThroughputEstimate decode_estimate;
};

struct ProfileOptions {
    std::size_t runs = 5;
    std::size_t workers = 1;
    HwParams hw;
};

// Times a greedy generate() per taxonomy row; each row keeps its minimum over the runs.
PerfReport profile_generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                            const ProfileOptions& opts = {});

std::string report_table(const PerfReport& r);
std::string report_csv(const PerfReport& r);
std::string report_json(const PerfReport& r);

}  // namespace awq_edge
