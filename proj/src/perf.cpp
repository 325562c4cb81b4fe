#include "awq_edge/perf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "awq_edge/macro.hpp"
#include "awq_edge/model_file.hpp"
#include "json.hpp"

namespace awq_edge {

void validate_hw(const HwParams& hw)
{
    if (!(hw.mem_bandwidth > 0.0) || !(hw.accel_freq > 0.0) || hw.channels == 0 ||
        !(hw.cycles_per_tile > 0.0) || hw.pipeline_fill_cycles < 0.0 ||
        hw.ps_overhead_per_token < 0.0) {
        throw std::invalid_argument("hardware parameters must be positive");
    }
    if (hw.strip_bits != 128 || hw.pe_rows != kMacroRows || hw.pe_cols == 0) {
        throw std::invalid_argument("format v1 fixes 128-bit strips and 8 PE rows");
    }
}

std::size_t streamed_bytes_per_token(const ModelConfig& config)
{
    std::size_t bytes = 0;
    for (const auto& t : tensor_manifest(config)) {
        if (t.quantized) {
            bytes += tensor_payload_bytes(t, config.group_size, config.awq_channel_scales);
        }
    }
    return bytes;
}

double accelerator_cycles_per_token(const ModelConfig& config, const HwParams& hw)
{
    validate_hw(hw);
    if (config.group_size % hw.pe_cols != 0) {
        throw std::invalid_argument("PE columns must divide the group size");
    }
    double cycles = 0.0;
    for (const auto& t : tensor_manifest(config)) {
        if (!t.quantized) {
            continue;
        }
        const std::size_t row_blocks = t.shape[0] / kMacroRows;
        const std::size_t groups = t.shape[1] / config.group_size;
        const std::size_t tiles_per_macro = config.group_size / hw.pe_cols;
        // the channel holding the most row blocks finishes last
        const std::size_t busiest = (row_blocks + hw.channels - 1) / hw.channels;
        cycles += static_cast<double>(busiest * groups * tiles_per_macro) * hw.cycles_per_tile +
                  hw.pipeline_fill_cycles;
    }
    return cycles;
}

ThroughputEstimate estimate_throughput(const ModelConfig& config, const HwParams& hw, Stage stage)
{
    validate_hw(hw);
    const double n = stage.kind == Stage::Kind::Prefill ? static_cast<double>(stage.tokens) : 1.0;
    if (!(n > 0.0)) {
        throw std::invalid_argument("prefill needs at least one token");
    }
    ThroughputEstimate e;
    e.bytes_streamed = static_cast<double>(streamed_bytes_per_token(config));
    e.memory_time_s = e.bytes_streamed / hw.mem_bandwidth;
    e.compute_time_s = n * accelerator_cycles_per_token(config, hw) / hw.accel_freq;
    e.memory_bound = e.memory_time_s >= e.compute_time_s;
    const double total = std::max(e.memory_time_s, e.compute_time_s) + n * hw.ps_overhead_per_token;
    e.tokens_per_s = total > 0.0 ? n / total : INFINITY;
    return e;
}

double decode_bandwidth_bound(const ModelConfig& config, const HwParams& hw)
{
    return hw.mem_bandwidth / static_cast<double>(streamed_bytes_per_token(config));
}

double score(const ScoreInputs& in)
{
    auto ratio = [](const RatioPair& p, const char* what) {
        if (!(p.max > 0.0)) {
            throw ScoreError(fmt::format("{}: maximum must be positive", what));
        }
        if (!(p.value > 0.0) || p.value > p.max) {
            throw ScoreError(fmt::format("{}: value {} must lie in (0, {}]", what, p.value, p.max));
        }
        return p.value / p.max;
    };
    return kAccuracyWeight * ratio(in.accuracy, "accuracy") +
           kMemoryWeight * ratio(in.memory, "memory") +
           kPrefillWeight * ratio(in.throughput_prefill, "throughput_prefill") +
           kDecodeWeight * ratio(in.throughput_decode, "throughput_decode");
}

CompressionReport compression_report(std::span<const TensorSpec> manifest, std::size_t group_size,
                                     bool awq_scales)
{
    CompressionReport r;
    for (const auto& t : manifest) {
        r.original_bytes += t.elements() * 2;
        if (t.quantized) {
            r.quantized_original_bytes += t.elements() * 2;
            r.quantized_packed_bytes += tensor_payload_bytes(t, group_size, awq_scales);
        }
    }
    r.packed_bytes = packed_size(manifest, group_size, awq_scales);
    auto reduction = [](double packed, double original) {
        return original > 0.0 ? 100.0 * (1.0 - packed / original) : 0.0;
    };
    r.reduction_percent = reduction(static_cast<double>(r.packed_bytes),
                                    static_cast<double>(r.original_bytes));
    r.quantized_reduction_percent = reduction(static_cast<double>(r.quantized_packed_bytes),
                                              static_cast<double>(r.quantized_original_bytes));
    return r;
}

CompressionReport compression_report(const ModelConfig& config)
{
    const auto manifest = tensor_manifest(config);
    return compression_report(manifest, config.group_size, config.awq_channel_scales);
}

PerfReport profile_generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                            const ProfileOptions& opts)
{
    const std::size_t runs = std::max<std::size_t>(opts.runs, 1);
    ForwardTrace best;
    std::chrono::nanoseconds best_wall = std::chrono::nanoseconds::max();
    for (std::size_t run = 0; run < runs; ++run) {
        ForwardTrace trace;
        RunOptions ro{opts.workers, &trace};
        const auto t0 = std::chrono::steady_clock::now();
        generate(model, prompt, n_new, Sampler::greedy(), ro, prompt.size() + n_new);
        const auto wall = std::chrono::steady_clock::now() - t0;
        best_wall = std::min<std::chrono::nanoseconds>(best_wall, wall);
        if (run == 0) {
            best = trace;
        } else {
            for (std::size_t i = 0; i < kOpKindCount; ++i) {
                best.time[i] = std::min(best.time[i], trace.time[i]);
            }
        }
    }

    PerfReport r;
    r.prompt_tokens = prompt.size();
    r.new_tokens = n_new;
    r.runs = runs;
    double mac_time = 0.0;
    for (OpKind k : kAllOps) {
        PerfRow row;
        row.kind = k;
        row.description = op_description(k);
        row.time_us = static_cast<double>(best.time_of(k).count()) / 1000.0;
        row.flops = best.flops_of(k);
        row.mac = is_mac_op(k);
        r.total_time_us += row.time_us;
        r.total_flops += row.flops;
        if (row.mac) {
            mac_time += row.time_us;
        }
        r.rows.push_back(row);
    }
    for (auto& row : r.rows) {
        row.percentage = r.total_time_us > 0.0 ? 100.0 * row.time_us / r.total_time_us : 0.0;
    }
    r.mac_time_percent = r.total_time_us > 0.0 ? 100.0 * mac_time / r.total_time_us : 0.0;
    r.mac_flop_percent = 100.0 * best.mac_share();
    const double wall_s = std::chrono::duration<double>(best_wall).count();
    r.measured_tokens_per_s = wall_s > 0.0 ? static_cast<double>(n_new) / wall_s : 0.0;

    const ModelConfig& c = model.config();
    if (!c.quantized_tensors.empty()) {
        r.streamed_bytes_per_token = static_cast<double>(streamed_bytes_per_token(c));
        r.prefill_estimate = estimate_throughput(c, opts.hw, Stage::prefill(std::max<std::size_t>(prompt.size(), 1)));
        r.decode_estimate = estimate_throughput(c, opts.hw, Stage::decode());
    }
    return r;
}

std::string report_table(const PerfReport& r)
{
    std::string out;
    auto line = [&](const std::string& desc, double us, double pct, std::uint64_t flops) {
        out += fmt::format("{:<48} {:>12.1f} {:>8.2f} {:>16}\n", desc, us, pct, flops);
    };
    out += fmt::format("{:<48} {:>12} {:>8} {:>16}\n", "Description", "Time (us)", "Pct (%)", "FLOPs");
    out += std::string(87, '-') + "\n";
    out += "Linear Operations\n";
    double mac_us = 0.0, mac_pct = 0.0;
    std::uint64_t mac_flops = 0;
    for (const auto& row : r.rows) {
        if (is_nonlinear_op(row.kind)) {
            continue;
        }
        line("  " + row.description, row.time_us, row.percentage, row.flops);
        if (row.mac) {
            mac_us += row.time_us;
            mac_pct += row.percentage;
            mac_flops += row.flops;
        }
    }
    out += std::string(87, '-') + "\n";
    line("Overall MAC operations", mac_us, mac_pct, mac_flops);
    out += std::string(87, '-') + "\n";
    out += "Non-Linear Operations\n";
    for (const auto& row : r.rows) {
        if (is_nonlinear_op(row.kind)) {
            line("  " + row.description, row.time_us, row.percentage, row.flops);
        }
    }
    out += std::string(87, '-') + "\n";
    line("Total", r.total_time_us, 100.0, r.total_flops);
    out += fmt::format("\nMAC share: {:.2f}% of time, {:.2f}% of FLOPs\n", r.mac_time_percent,
                       r.mac_flop_percent);
    out += fmt::format("runs: {} (min per row), prompt tokens: {}, new tokens: {}\n", r.runs,
                       r.prompt_tokens, r.new_tokens);
    out += fmt::format("host throughput: {:.2f} tokens/s\n", r.measured_tokens_per_s);
    if (r.streamed_bytes_per_token > 0.0) {
        out += fmt::format("streamed weight bytes/token: {:.0f}\n", r.streamed_bytes_per_token);
        out += fmt::format("accelerator roofline: decode {:.2f} tokens/s ({}-bound), prefill {:.2f} "
                           "tokens/s\n",
                           r.decode_estimate.tokens_per_s,
                           r.decode_estimate.memory_bound ? "memory" : "compute",
                           r.prefill_estimate.tokens_per_s);
    }
    return out;
}

std::string report_csv(const PerfReport& r)
{
    std::string out = "description,time_us,percentage,flops,mac\n";
    for (const auto& row : r.rows) {
        out += fmt::format("\"{}\",{:.3f},{:.4f},{},{}\n", row.description, row.time_us,
                           row.percentage, row.flops, row.mac ? 1 : 0);
    }
    out += fmt::format("\"Total\",{:.3f},100.0000,{},0\n", r.total_time_us, r.total_flops);
    return out;
}

std::string report_json(const PerfReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"description", row.description},
                        {"time_us", row.time_us},
                        {"percentage", row.percentage},
                        {"flops", row.flops},
                        {"mac", row.mac}});
    }
    auto estimate = [](const ThroughputEstimate& e) {
        return nlohmann::json{{"tokens_per_s", e.tokens_per_s},
                              {"bytes_streamed", e.bytes_streamed},
                              {"memory_time_s", e.memory_time_s},
                              {"compute_time_s", e.compute_time_s},
                              {"memory_bound", e.memory_bound}};
    };
    nlohmann::json j{{"rows", rows},
                     {"total_time_us", r.total_time_us},
                     {"total_flops", r.total_flops},
                     {"mac_time_percent", r.mac_time_percent},
                     {"mac_flop_percent", r.mac_flop_percent},
                     {"prompt_tokens", r.prompt_tokens},
                     {"new_tokens", r.new_tokens},
                     {"runs", r.runs},
                     {"measured_tokens_per_s", r.measured_tokens_per_s},
                     {"streamed_bytes_per_token", r.streamed_bytes_per_token},
                     {"prefill_estimate", estimate(r.prefill_estimate)},
                     {"decode_estimate", estimate(r.decode_estimate)}};
    return j.dump(2) + "\n";
}

}  // namespace awq_edge
