#include "awq_edge/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "awq_edge/decoder.hpp"
#include "awq_edge/model_file.hpp"
#include "awq_edge/perf.hpp"
#include "awq_edge/quant.hpp"
#include "awq_edge/synth.hpp"

namespace awq_edge {

namespace {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t resolve_workers(std::optional<std::size_t> flag)
{
    if (flag) {
        return *flag;
    }
    if (const char* env = std::getenv("AWQ_EDGE_WORKERS")) {
        try {
            const unsigned long v = std::stoul(env);
            if (v >= 1 && v <= 4) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw CLI::ValidationError("AWQ_EDGE_WORKERS", "must be an integer in [1, 4]");
    }
    return 1;
}

void add_hw_flags(CLI::App* cmd, HwParams& hw)
{
    cmd->add_option("--bandwidth", hw.mem_bandwidth, "memory bandwidth, bytes/s")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--freq", hw.accel_freq, "accelerator clock, Hz")->check(CLI::PositiveNumber);
    cmd->add_option("--channels", hw.channels, "streaming channels")->check(CLI::PositiveNumber);
    cmd->add_option("--ps-overhead", hw.ps_overhead_per_token, "host seconds per token")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--pipeline-fill", hw.pipeline_fill_cycles, "PE pipeline fill cycles per tensor")
        ->check(CLI::NonNegativeNumber);
}

std::string format_inspect(const ModelFile& m, std::size_t file_bytes, const std::string& format)
{
    struct Row {
        std::string name, dtype, shape;
        std::size_t gs = 0, channels = 0, macros = 0, bytes = 0, aux = 0;
        double bits = 16.0;
    };
    std::vector<Row> rows;
    std::size_t q_weights = 0, q_bytes = 0;
    for (const auto& t : m.tensors) {
        Row r;
        r.name = t.name;
        r.shape = fmt::format("{}", fmt::join(t.shape, "x"));
        if (t.quantized()) {
            const auto& p = t.packed();
            r.dtype = "awq_macro_q4";
            r.gs = p.group_size;
            r.channels = p.schedule.channel_count();
            r.macros = p.macro_count();
            r.bytes = p.stream.size();
            r.aux = p.awq_channel_scale.size() * 2;
            r.bits = static_cast<double>(r.bytes * 8) /
                     static_cast<double>(p.out_channels * p.in_channels);
            q_weights += p.out_channels * p.in_channels;
            q_bytes += r.bytes;
        } else {
            r.dtype = "f16";
            r.bytes = t.half().size() * 2;
        }
        rows.push_back(r);
    }
    const double q_bits = q_weights ? static_cast<double>(q_bytes * 8) / static_cast<double>(q_weights) : 0.0;

    if (format == "json") {
        nlohmann::json j;
        j["format_version"] = kFormatVersion;
        j["tensor_count"] = m.tensors.size();
        j["file_bytes"] = file_bytes;
        j["quantized_bits_per_weight"] = q_bits;
        j["tensors"] = nlohmann::json::array();
        for (const auto& r : rows) {
            j["tensors"].push_back({{"name", r.name}, {"dtype", r.dtype}, {"shape", r.shape},
                                    {"group_size", r.gs}, {"channels", r.channels},
                                    {"macros", r.macros}, {"bytes", r.bytes},
                                    {"aux_bytes", r.aux}, {"bits_per_weight", r.bits}});
        }
        return j.dump(2) + "\n";
    }
    std::string out;
    if (format == "csv") {
        out = "name,dtype,shape,group_size,channels,macros,bytes,aux_bytes,bits_per_weight\n";
        for (const auto& r : rows) {
            out += fmt::format("{},{},{},{},{},{},{},{},{:.4f}\n", r.name, r.dtype, r.shape, r.gs,
                               r.channels, r.macros, r.bytes, r.aux, r.bits);
        }
        return out;
    }
    out += fmt::format("format version {}, {} tensors, {} bytes\n", kFormatVersion,
                       m.tensors.size(), file_bytes);
    out += fmt::format("{:<24} {:<13} {:>12} {:>4} {:>3} {:>8} {:>12} {:>6} {:>9}\n", "name", "dtype",
                       "shape", "gs", "ch", "macros", "bytes", "aux", "bits/w");
    for (const auto& r : rows) {
        out += fmt::format("{:<24} {:<13} {:>12} {:>4} {:>3} {:>8} {:>12} {:>6} {:>9.4f}\n", r.name,
                           r.dtype, r.shape, r.gs, r.channels, r.macros, r.bytes, r.aux, r.bits);
    }
    out += fmt::format("quantized bits/weight: {:.4f}\n", q_bits);
    return out;
}

std::string format_config_summary(const ModelConfig& c, const HwParams& hw, const std::string& format)
{
    const CompressionReport cr = compression_report(c);
    const bool any_q = !c.quantized_tensors.empty();
    ThroughputEstimate dec, pre;
    if (any_q) {
        dec = estimate_throughput(c, hw, Stage::decode());
        pre = estimate_throughput(c, hw, Stage::prefill(128));
    }
    const ForwardTrace flops = count_flops(c, 1);
    if (format == "json") {
        nlohmann::json j{{"original_bytes", cr.original_bytes},
                         {"packed_bytes", cr.packed_bytes},
                         {"reduction_percent", cr.reduction_percent},
                         {"quantized_reduction_percent", cr.quantized_reduction_percent},
                         {"bits_per_weight", macro_bits_per_weight(c.group_size)},
                         {"mac_flop_percent", 100.0 * flops.mac_share()},
                         {"decode_tokens_per_s", dec.tokens_per_s},
                         {"prefill128_tokens_per_s", pre.tokens_per_s},
                         {"decode_bandwidth_bound", any_q ? decode_bandwidth_bound(c, hw) : 0.0}};
        return j.dump(2) + "\n";
    }
    std::string out;
    out += fmt::format("original (FP16) bytes: {} ({:.2f} MB)\n", cr.original_bytes,
                       cr.original_bytes / 1e6);
    out += fmt::format("packed bytes: {} ({:.2f} MB)\n", cr.packed_bytes, cr.packed_bytes / 1e6);
    out += fmt::format("reduction: {:.2f}%\n", cr.reduction_percent);
    if (any_q) {
        out += fmt::format("quantized bits/weight: {:.4f}\n", macro_bits_per_weight(c.group_size));
        out += fmt::format("decode roofline: {:.2f} tokens/s ({}-bound), bandwidth bound {:.2f} tokens/s\n",
                           dec.tokens_per_s, dec.memory_bound ? "memory" : "compute",
                           decode_bandwidth_bound(c, hw));
        out += fmt::format("prefill(128) roofline: {:.2f} tokens/s\n", pre.tokens_per_s);
    }
    out += fmt::format("MAC share of FLOPs per token: {:.2f}%\n", 100.0 * flops.mac_share());
    return out;
}

std::size_t file_size_of(const std::filesystem::path& base)
{
    std::error_code ec;
    const auto n = std::filesystem::file_size(model_paths(base).weights, ec);
    return ec ? 0 : static_cast<std::size_t>(n);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"AWQ_MACRO INT4 edge inference toolkit", "awq-edge"};
    app.require_subcommand(1);
    std::string format = "table";
    std::optional<std::size_t> workers_flag;

    // synth
    auto* synth = app.add_subcommand("synth", "generate, quantize and pack a seeded synthetic model");
    std::string synth_config, synth_out;
    std::uint64_t seed = 0;
    std::optional<std::size_t> gs_flag;
    std::size_t channels = kDefaultChannels;
    bool awq = false, fp16_only = false;
    std::size_t calib = 32;
    synth->add_option("--config", synth_config, "architecture JSON")->required();
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", synth_out, "output base path (writes .bin and .json)")->required();
    synth->add_option("--gs", gs_flag, "group size (default: config)")->check(CLI::PositiveNumber);
    synth->add_option("--channels", channels, "streaming channels")->check(CLI::Range(1, 64));
    synth->add_flag("--awq-scale", awq, "search per-channel AWQ scales (also enabled by the config)");
    synth->add_option("--calib", calib, "calibration samples for --awq-scale")->check(CLI::PositiveNumber);
    synth->add_flag("--fp16", fp16_only, "write the unquantized FP16 model");

    // quantize
    auto* quant = app.add_subcommand("quantize", "quantize an FP16 model pair into AWQ_MACRO form");
    std::string model_path, quant_out;
    quant->add_option("--model", model_path, "input base path")->required();
    quant->add_option("--out", quant_out, "output base path")->required();
    quant->add_option("--gs", gs_flag, "group size (default: config)")->check(CLI::PositiveNumber);
    quant->add_option("--channels", channels, "streaming channels")->check(CLI::Range(1, 64));
    quant->add_flag("--awq-scale", awq, "search per-channel AWQ scales");
    quant->add_option("--calib", calib, "calibration samples for --awq-scale")->check(CLI::PositiveNumber);
    quant->add_option("--seed", seed, "calibration seed");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print the tensor directory, or size a config");
    std::string inspect_config;
    HwParams hw;
    auto* inspect_model = inspect->add_option("--model", model_path, "model base path");
    auto* inspect_cfg = inspect->add_option("--config", inspect_config, "architecture JSON (analytic)");
    inspect_model->excludes(inspect_cfg);
    inspect->add_option("--format", format)->check(CLI::IsMember({"table", "csv", "json"}));
    add_hw_flags(inspect, hw);

    // generate
    auto* gen = app.add_subcommand("generate", "generate text from a packed model");
    std::string prompt;
    std::size_t n_new = 16;
    std::optional<float> temperature;
    bool stats = false, ids = false;
    gen->add_option("--model", model_path, "model base path")->required();
    gen->add_option("--prompt", prompt, "prompt text")->required();
    gen->add_option("--n", n_new, "tokens to generate");
    gen->add_option("--temp", temperature, "sampling temperature (greedy if absent)")
        ->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "sampling seed");
    gen->add_option("--workers", workers_flag, "kernel channel workers")->check(CLI::Range(1, 4));
    gen->add_flag("--stats", stats, "append achieved tokens/s");
    gen->add_flag("--ids", ids, "print token ids instead of text");

    // profile
    auto* prof = app.add_subcommand("profile", "per-operation latency breakdown of a generation");
    std::size_t runs = 5;
    prof->add_option("--model", model_path, "model base path")->required();
    prof->add_option("--prompt", prompt, "prompt text")->required();
    prof->add_option("--n", n_new, "tokens to generate");
    prof->add_option("--runs", runs, "repetitions (min per row)")->check(CLI::PositiveNumber);
    prof->add_option("--workers", workers_flag, "kernel channel workers")->check(CLI::Range(1, 4));
    prof->add_option("--format", format)->check(CLI::IsMember({"table", "csv", "json"}));
    add_hw_flags(prof, hw);

    // score
    auto* sc = app.add_subcommand("score", "weighted benchmark score");
    ScoreInputs si;
    sc->add_option("--accuracy", si.accuracy.value)->required();
    sc->add_option("--accuracy-max", si.accuracy.max)->required();
    sc->add_option("--memory", si.memory.value)->required();
    sc->add_option("--memory-max", si.memory.max)->required();
    sc->add_option("--prefill", si.throughput_prefill.value)->required();
    sc->add_option("--prefill-max", si.throughput_prefill.max)->required();
    sc->add_option("--decode", si.throughput_decode.value)->required();
    sc->add_option("--decode-max", si.throughput_decode.max)->required();
    sc->add_option("--format", format)->check(CLI::IsMember({"table", "csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "awq-edge: error: usage: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            ModelConfig config = load_config(synth_config);
            ModelFile fp = synthesize_fp16_model(config, seed);
            if (fp16_only || config.quantized_tensors.empty()) {
                write_model(fp, synth_out);
            } else {
                QuantizeOptions qo{gs_flag.value_or(config.group_size), awq || config.awq_channel_scales,
                                   calib, seed, channels};
                write_model(quantize_model(fp, qo, config.quantized_tensors), synth_out);
            }
            err << fmt::format("wrote {} ({} bytes)\n", model_paths(synth_out).weights.string(),
                               file_size_of(synth_out));
        } else if (quant->parsed()) {
            const ModelFile fp = read_model(model_path);
            const std::size_t gs = gs_flag.value_or(fp.config.group_size);
            QuantizeOptions qo{gs, awq, calib, seed, channels};
            write_model(quantize_model(fp, qo), quant_out);
            err << fmt::format("wrote {} ({} bytes)\n", model_paths(quant_out).weights.string(),
                               file_size_of(quant_out));
        } else if (inspect->parsed()) {
            if (!inspect_config.empty()) {
                out << format_config_summary(load_config(inspect_config), hw, format);
            } else if (!model_path.empty()) {
                const ModelFile m = read_model(model_path);
                out << format_inspect(m, file_size_of(model_path), format);
            } else {
                err << "awq-edge: error: usage: inspect needs --model or --config\n";
                return kExitUsage;
            }
        } else if (gen->parsed()) {
            const std::size_t workers = resolve_workers(workers_flag);
            const Model model = Model::from_file(read_model(model_path));
            const auto tokens = byte_tokenize(prompt);
            const Sampler sampler = temperature ? Sampler::with_temperature(*temperature, seed)
                                                : Sampler::greedy();
            const auto t0 = std::chrono::steady_clock::now();
            const auto result = generate(model, tokens, n_new, sampler, RunOptions{workers, nullptr},
                                         std::max(kDefaultMaxSeq, tokens.size() + n_new));
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (ids) {
                out << fmt::format("{}\n", fmt::join(result, " "));
            } else {
                out << prompt << byte_detokenize(result) << "\n";
            }
            if (stats) {
                out << fmt::format("tokens/s: {:.3f}\n", secs > 0.0 ? n_new / secs : 0.0);
            }
        } else if (prof->parsed()) {
            const std::size_t workers = resolve_workers(workers_flag);
            const Model model = Model::from_file(read_model(model_path));
            const auto tokens = byte_tokenize(prompt);
            const PerfReport r = profile_generate(model, tokens, n_new, ProfileOptions{runs, workers, hw});
            out << (format == "json" ? report_json(r) : format == "csv" ? report_csv(r) : report_table(r));
        } else if (sc->parsed()) {
            const double s = score(si);
            if (format == "json") {
                out << nlohmann::json{{"score", s}}.dump() << "\n";
            } else if (format == "csv") {
                out << fmt::format("score\n{:.4f}\n", s);
            } else {
                out << fmt::format("{:.4f}\n", s);
                err << "reference scores (external, normalization set unknown): baseline 0.40, "
                       "AWQ GS=64 0.55\n";
            }
        }
    } catch (const CLI::ValidationError& e) {
        err << "awq-edge: error: usage: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "awq-edge: error: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return kExitData;
    } catch (const QuantizationError& e) {
        err << "awq-edge: error: quantization: " << e.what() << "\n";
        return kExitData;
    } catch (const DimensionError& e) {
        err << "awq-edge: error: dimension: " << e.what() << "\n";
        return kExitData;
    } catch (const RuntimeError& e) {
        err << "awq-edge: error: runtime: " << e.what() << "\n";
        return kExitData;
    } catch (const ScoreError& e) {
        err << "awq-edge: error: score: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        err << "awq-edge: error: invalid: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "awq-edge: error: internal: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitOk;
}

}  // namespace awq_edge
