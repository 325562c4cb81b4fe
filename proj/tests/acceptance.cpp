// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   acceptance [--write-full-model DIR]
// --write-full-model additionally packs and writes the 0.5B-like model (~470 MB)
// into DIR and checks the analytic size against the real file.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "awq_edge/cli.hpp"
#include "awq_edge/decoder.hpp"
#include "awq_edge/perf.hpp"
#include "awq_edge/qmac.hpp"
#include "awq_edge/synth.hpp"
#include "json.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

using namespace awq_edge;
using awq_edge::testing::Rng;
namespace fs = std::filesystem;

namespace {

const std::string kTinyConfig = AWQ_EDGE_CONFIG_DIR "/tiny.json";
const std::string kBigConfig = AWQ_EDGE_CONFIG_DIR "/qwen2.5-0.5b-like.json";

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / fmt::format("awq_edge_accept_{}", std::random_device{}());
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int cli(std::vector<std::string> args, std::string* out = nullptr)
{
    args.insert(args.begin(), "awq-edge");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream o, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) {
        *out = o.str();
    }
    return code;
}

MacroFields random_fields(Rng& rng, std::size_t gs)
{
    MacroFields f;
    f.group_size = gs;
    for (std::size_t i = 0; i < gs * kMacroRows; ++i) {
        f.codes.push_back(static_cast<std::uint8_t>(rng.integer(0, 15)));
    }
    for (std::size_t j = 0; j < kMacroRows; ++j) {
        std::uint16_t bits;
        do {
            bits = static_cast<std::uint16_t>(rng.bits());
        } while ((bits & 0x7c00) == 0x7c00 && (bits & 0x3ff) != 0);  // NaN payloads excluded
        f.scales[j] = Half{bits};
        f.zeros[j] = static_cast<std::uint8_t>(rng.integer(0, 15));
    }
    return f;
}

// 1. pack/unpack bijection and padding detection
Outcome format_round_trip()
{
    Stopwatch sw;
    Rng rng(1001);
    int mismatches = 0, undetected = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const std::size_t gs = i % 2 ? 128 : 64;
        const auto f = random_fields(rng, gs);
        const auto m = pack_macro(f);
        if (!(unpack_macro(m) == f) || m.bytes.size() != macro_bytes(gs)) {
            ++mismatches;
        }
        // set 1..4 random padding bits
        auto bad = m;
        const std::size_t zero_strip = macro_qweight_strips(gs) * kStripBytes + kStripBytes;
        const int flips = rng.integer(1, 4);
        for (int k = 0; k < flips; ++k) {
            const std::size_t bit = 32 + static_cast<std::size_t>(rng.integer(0, 95));
            bad.bytes[zero_strip + bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
        }
        try {
            unpack_macro(bad);
            ++undetected;
        } catch (const FormatError& e) {
            if (e.kind() != FormatErrorKind::Corruption) {
                ++undetected;
            }
        }
    }
    const double t = sw.seconds();
    return {mismatches == 0 && undetected == 0 && t < 10.0,
            fmt::format("{} macros, {} round-trip mismatches, {} padding violations undetected, "
                        "{:.2f}s (limit 10s)",
                        n, mismatches, undetected, t)};
}

// 2. bits/weight reported by inspect
Outcome bits_per_weight()
{
    TempDir dir;
    const auto cfg = dir.path / "wide.json";
    std::ofstream(cfg) << R"({"dim": 128, "n_layers": 1, "n_heads": 4, "n_kv_heads": 2,
        "head_dim": 32, "ffn_hidden": 256, "vocab_size": 256})";
    double got[2] = {0.0, 0.0};
    const std::size_t gs[2] = {64, 128};
    for (int i = 0; i < 2; ++i) {
        const auto base = (dir.path / fmt::format("gs{}", gs[i])).string();
        if (cli({"synth", "--config", cfg.string(), "--gs", std::to_string(gs[i]), "--out", base}) != 0) {
            return {false, "synth failed"};
        }
        std::string out;
        if (cli({"inspect", "--model", base, "--format", "json"}, &out) != 0) {
            return {false, "inspect failed"};
        }
        got[i] = nlohmann::json::parse(out).at("quantized_bits_per_weight").get<double>();
    }
    return {got[0] == 4.5 && got[1] == 4.25,
            fmt::format("inspect: GS=64 -> {} bits/weight (expect 4.5), GS=128 -> {} (expect 4.25)",
                        got[0], got[1])};
}

// 3. compression of the 0.5B-like configuration
Outcome compression(const std::optional<fs::path>& write_dir)
{
    Stopwatch sw;
    const ModelConfig c = load_config(kBigConfig);
    const auto r = compression_report(c);
    const double mb = static_cast<double>(r.packed_bytes) / 1e6;
    const double t = sw.seconds();
    bool pass = std::fabs(r.reduction_percent - 55.08) <= 5.0 &&
                std::fabs(mb - 443.81) <= 0.10 * 443.81 && t < 1.0;
    std::string detail = fmt::format(
        "original {:.2f} MB, packed {:.2f} MB (target 443.81 +-10%), reduction {:.2f}% "
        "(target 55.08 +-5), quantized-payload reduction {:.3f}%, {:.3f}s",
        static_cast<double>(r.original_bytes) / 1e6, mb, r.reduction_percent,
        r.quantized_reduction_percent, t);
    if (write_dir) {
        const auto file = quantize_model(synthesize_fp16_model(c, 1), QuantizeOptions{});
        const auto base = *write_dir / "qwen2.5-0.5b-like";
        write_model(file, base);
        const auto size = fs::file_size(model_paths(base).weights);
        pass = pass && size == r.packed_bytes;
        detail += fmt::format("; written file {} bytes ({})", size,
                              size == r.packed_bytes ? "matches" : "MISMATCH");
    } else {
        detail += "; full file write skipped (--write-full-model DIR)";
    }
    return {pass, detail};
}

// 4. kernel vs dequantize-then-matvec oracle
Outcome kernel_oracle()
{
    Stopwatch sw;
    Rng rng(1004);
    double worst = 0.0, worst_plain = 0.0;
    int inexact = 0;
    const std::size_t outs[] = {8, 64, 136, 512, 896};
    const std::size_t ins[] = {64, 128, 448, 896};
    for (int layer = 0; layer < 100; ++layer) {
        const std::size_t out = layer % 10 == 0 ? 896 : outs[rng.integer(0, 4)];
        const std::size_t in = layer % 10 == 0 ? 896 : ins[rng.integer(0, 3)];
        const auto q = quantize_tensor(rng.matrix(out, in, -0.2f, 0.2f), 64);
        const auto p = layout_tensor(q, 4);
        const auto w = dequantize_tensor(q);
        const auto x = rng.vec(in);
        std::vector<float> ref(out);
        matvec_f32(w.data(), out, x, ref);
        const auto y = qmatvec(p, x);
        worst = std::max(worst, testing::matvec_rel_err(y, ref, w, x));
        for (std::size_t o = 0; o < out; ++o) {
            if (ref[o] != 0.0f) {
                worst_plain = std::max(worst_plain, std::fabs(static_cast<double>(y[o]) - ref[o]) /
                                                        std::fabs(static_cast<double>(ref[o])));
            }
        }

        // small-integer instance: integer scales, activations and (q - z)
        QuantizedTensor qi = q;
        for (auto& g : qi.groups) {
            g.scale = to_half(static_cast<float>(rng.integer(1, 3)));
        }
        const auto pi = layout_tensor(qi, 4);
        const auto wi = dequantize_tensor(qi);
        std::vector<float> xi(in);
        for (auto& v : xi) {
            v = static_cast<float>(rng.integer(-4, 4));
        }
        const auto yi = qmatvec(pi, xi);
        for (std::size_t o = 0; o < out; ++o) {
            long long acc = 0;
            for (std::size_t t = 0; t < in; ++t) {
                acc += static_cast<long long>(wi.at(o, t)) * static_cast<long long>(xi[t]);
            }
            inexact += yi[o] != static_cast<float>(acc);
        }
    }
    const double t = sw.seconds();
    return {worst <= 1e-4 && inexact == 0 && t < 60.0,
            fmt::format("100 layers up to 896x896: max relative error {:.3e} (limit 1e-4, per output "
                        "relative to sum|w*x|), {} inexact integer outputs, {:.2f}s (limit 60s); "
                        "informational |y-ref|/|ref| max {:.3e}, dominated by outputs that cancel "
                        "to near zero",
                        worst, inexact, t, worst_plain)};
}

// 5. determinism across runs and worker counts
Outcome determinism()
{
    Rng rng(1005);
    int diffs = 0;
    const auto p = layout_tensor(quantize_tensor(rng.matrix(896, 896), 64), 4);
    const auto x = rng.vec(896);
    const auto ref = qmatvec(p, x, 1);
    for (std::size_t w : {1u, 2u, 4u}) {
        for (int rep = 0; rep < 3; ++rep) {
            diffs += qmatvec(p, x, w) != ref;
        }
    }

    TempDir dir;
    const auto base = (dir.path / "tiny").string();
    if (cli({"synth", "--config", kTinyConfig, "--seed", "3", "--out", base}) != 0) {
        return {false, "synth failed"};
    }
    std::string greedy_ref, temp_ref;
    for (const char* w : {"1", "2", "4"}) {
        for (int rep = 0; rep < 2; ++rep) {
            std::string g, s;
            cli({"generate", "--model", base, "--prompt", "Edge inference", "--n", "12", "--ids",
                 "--workers", w},
                &g);
            cli({"generate", "--model", base, "--prompt", "Edge inference", "--n", "12", "--ids",
                 "--workers", w, "--temp", "0.8", "--seed", "11"},
                &s);
            if (greedy_ref.empty()) {
                greedy_ref = g;
                temp_ref = s;
            }
            diffs += g != greedy_ref || g.empty();
            diffs += s != temp_ref || s.empty();
        }
    }
    return {diffs == 0, fmt::format("qmatvec x9 and generate (greedy + temperature) x6 over workers "
                                    "{{1,2,4}}: {} differing outputs",
                                    diffs)};
}

// 6. reconstruction bound and AWQ search never worse than alpha 0
Outcome quantization_bound()
{
    Rng rng(1006);
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t gs = i % 2 ? 128 : 64;
        const float mag = std::ldexp(1.0f, rng.integer(-10, 4));
        auto w = rng.vec(gs, -mag, mag);
        const auto g = quantize_group(w);
        const auto r = dequantize_group(g);
        float lo = 0.0f, hi = 0.0f;
        for (float v : w) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double s = to_float(g.scale);
        const double slack = std::fabs((static_cast<double>(hi) - lo) / 15.0 - s) * 15.0;
        const double bound = s / 2.0 + slack + 1e-6 * mag;
        for (std::size_t k = 0; k < gs; ++k) {
            violations += std::fabs(static_cast<double>(w[k]) - r[k]) > bound;
        }
    }

    const auto grid = default_alpha_grid();
    int worse = 0;
    double salient_alpha = 0.0, salient_gain = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        TensorF32 w = rng.matrix(16, 128);
        TensorF32 x = rng.matrix(16, 128);
        if (inst == 0) {
            // one channel with 100x activations and weights rounding would erase
            for (std::size_t o = 0; o < 16; ++o) {
                w.at(o, 5) = rng.uniform(-0.03f, 0.03f);
            }
            for (std::size_t n = 0; n < 16; ++n) {
                x.at(n, 5) *= 100.0f;
            }
        } else {
            x = synthetic_calibration(16, 128, static_cast<std::uint64_t>(inst));
        }
        const auto r = awq_search_channel_scales(w, x, grid, 64);
        worse += r.mse > r.alpha_mse.front();
        if (inst == 0) {
            salient_alpha = r.alpha;
            salient_gain = r.alpha_mse.front() / r.mse;
        }
    }
    return {violations == 0 && worse == 0 && salient_alpha > 0.0,
            fmt::format("10^4 groups: {} bound violations; 50 AWQ instances: {} worse than alpha=0; "
                        "salient case picks alpha={:.2f} with {:.2f}x lower MSE",
                        violations, worse, salient_alpha, salient_gain)};
}

// 7. prefill/decode equivalence and reference-model agreement on the tiny config
Outcome runtime_equivalence()
{
    const ModelConfig c = load_config(kTinyConfig);
    QuantizeOptions opts;
    opts.group_size = c.group_size;
    opts.awq_scale = c.awq_channel_scales;
    opts.seed = 7;
    const auto file = quantize_model(synthesize_fp16_model(c, 7), opts, c.quantized_tensors);
    const Model model = Model::from_file(file);

    const auto prompt = byte_tokenize("The quick brown fox");
    KvCache a(c), b(c);
    const auto batch = prefill(model, a, prompt);
    std::vector<float> step;
    for (int t : prompt) {
        step = decode_step(model, b, t);
    }
    const double pd = testing::max_abs_diff(batch, step);

    testing::ReferenceModel ref(file);
    KvCache cache(c);
    double rel = 0.0;
    for (int t : prompt) {
        rel = std::max(rel, testing::logits_rel_err(decode_step(model, cache, t), ref.step(t)));
    }
    return {pd <= 1e-6 && rel <= 1e-4,
            fmt::format("dim {}, {} layers: prefill vs decode max abs diff {:.3e} (limit 1e-6); "
                        "kernel model vs FP64 dequantized reference {:.3e} relative (limit 1e-4, "
                        "max-norm over logits)",
                        c.dim, c.n_layers, pd, rel)};
}

// 8. MAC share of counted FLOPs
Outcome mac_dominance()
{
    const ModelConfig c = load_config(kBigConfig);
    const double decode = 100.0 * count_flops(c, 1).mac_share();
    const double prompt = 100.0 * count_flops(c, 128).mac_share();
    return {decode >= 90.0 && prompt >= 90.0,
            fmt::format("0.5B-like: MAC share {:.2f}% (1 token), {:.2f}% (128-token prefill); "
                        "reference figure 91.61% is wall time on the target board, not reproduced",
                        decode, prompt)};
}

// 9. score formula
Outcome score_formula()
{
    const ScoreInputs top{{0.6, 0.6}, {2.0, 2.0}, {8.0, 8.0}, {5.1, 5.1}};
    const double s1 = score(top);
    const ScoreInputs hand{{0.6, 0.6}, {1.0, 2.0}, {4.0, 8.0}, {2.55, 5.1}};
    const double s2 = score(hand);
    int nonmonotone = 0;
    for (int which = 0; which < 4; ++which) {
        double prev = 0.0;
        for (int k = 1; k <= 50; ++k) {
            ScoreInputs in = hand;
            RatioPair* p[] = {&in.accuracy, &in.memory, &in.throughput_prefill, &in.throughput_decode};
            p[which]->value = p[which]->max * k / 50.0;
            const double s = score(in);
            nonmonotone += !(s > prev);
            prev = s;
        }
    }
    return {s1 == 1.0 && s2 == 0.7 && nonmonotone == 0,
            fmt::format("all maximal -> {:.17g}; (1, .5, .5, .5) -> {:.17g}; {} monotonicity "
                        "violations; external 0.55/0.40 reference pair is not recomputed",
                        s1, s2, nonmonotone)};
}

// 10. roofline monotonicity and feasibility of the 5.10 tokens/s reference rate
Outcome throughput_model()
{
    const ModelConfig c = load_config(kBigConfig);
    int violations = 0;
    for (Stage st : {Stage::decode(), Stage::prefill(64)}) {
        for (int knob = 0; knob < 3; ++knob) {
            double prev = 0.0;
            for (int k = 0; k < 24; ++k) {
                HwParams hw;
                const double f = std::ldexp(1.0, k - 12);
                if (knob == 0) {
                    hw.mem_bandwidth *= f;
                } else if (knob == 1) {
                    hw.accel_freq *= f;
                } else {
                    hw.channels = static_cast<std::size_t>(k + 1);
                    hw.accel_freq = 5e6;  // keep compute relevant so channels matter
                }
                const double t = estimate_throughput(c, hw, st).tokens_per_s;
                violations += t < prev;
                prev = t;
            }
        }
    }
    const HwParams hw;
    const double bound = decode_bandwidth_bound(c, hw);
    const auto dec = estimate_throughput(c, hw, Stage::decode());
    return {violations == 0 && bound > 5.10 && dec.tokens_per_s > 5.10,
            fmt::format("{} monotonicity violations; decode bound at 19.2 GB/s = {:.2f} tokens/s "
                        "({} bytes/token), roofline {:.2f} tokens/s, reference rate 5.10 is below it",
                        violations, bound, static_cast<std::size_t>(dec.bytes_streamed),
                        dec.tokens_per_s)};
}

}  // namespace

int main(int argc, char** argv)
{
    std::optional<fs::path> write_dir;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--write-full-model" && i + 1 < argc) {
            write_dir = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--write-full-model DIR]\n";
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"format round-trip", format_round_trip},
        {"bits per weight", bits_per_weight},
        {"compression", [&] { return compression(write_dir); }},
        {"kernel-oracle equivalence", kernel_oracle},
        {"determinism", determinism},
        {"quantization bound", quantization_bound},
        {"runtime equivalence", runtime_equivalence},
        {"MAC dominance", mac_dominance},
        {"score formula", score_formula},
        {"throughput model", throughput_model},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("exception: {}", e.what())};
        }
        failed += !o.pass;
        std::cout << fmt::format("[{}] {:>2}. {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1,
                                 criteria[i].first, o.detail)
                  << std::flush;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
