#include "awq_edge/synth.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "awq_edge/quant.hpp"

namespace awq_edge {

namespace {

// Uniform in [-1, 1) from raw generator bits, identical on every platform.
class Uniform {
public:
    explicit Uniform(std::uint64_t seed) : rng_(seed) {}
    float next() { return static_cast<float>(static_cast<double>(rng_() >> 11) * 0x1.0p-52 - 1.0); }
    double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 rng_;
};

std::uint64_t tensor_seed(std::uint64_t seed, const std::string& name)
{
    return seed ^ (name_hash(name) * 0x9e3779b97f4a7c15ull);
}

}  // namespace

ModelFile synthesize_fp16_model(ModelConfig config, std::uint64_t seed)
{
    config.quantized_tensors.clear();
    config.awq_channel_scales = false;
    validate_config(config);

    ModelFile model;
    model.config = config;
    for (const TensorSpec& ts : tensor_manifest(config)) {
        Uniform u(tensor_seed(seed, ts.name));
        std::vector<Half> data(ts.elements());
        for (auto& h : data) {
            float v = 0.0f;
            switch (ts.role) {
            case TensorRole::Embedding: v = 0.5f * u.next(); break;
            case TensorRole::Norm: v = 1.0f + 0.1f * u.next(); break;
            case TensorRole::Bias: v = 0.05f * u.next(); break;
            case TensorRole::Projection:
            case TensorRole::OutputHead:
                v = u.next() * std::sqrt(3.0f / static_cast<float>(ts.shape[1]));
                break;
            }
            h = to_half(v);
        }
        model.tensors.push_back(StoredTensor{ts.name, ts.shape, std::move(data)});
    }
    return model;
}

TensorF32 synthetic_calibration(std::size_t samples, std::size_t channels, std::uint64_t seed)
{
    Uniform u(seed);
    std::vector<float> magnitude(channels);
    for (auto& m : magnitude) {
        // a few channels carry much larger activations than the rest
        m = u.unit() < 0.02 ? 20.0f + 30.0f * static_cast<float>(u.unit())
                            : static_cast<float>(std::exp(u.next()));
    }
    TensorF32 x({samples, channels});
    for (std::size_t n = 0; n < samples; ++n) {
        auto row = x.row(n);
        for (std::size_t c = 0; c < channels; ++c) {
            row[c] = magnitude[c] * u.next();
        }
    }
    return x;
}

ModelFile quantize_model(const ModelFile& fp16, const QuantizeOptions& opts,
                         const std::vector<std::string>& names)
{
    ModelConfig config = fp16.config;
    config.group_size = opts.group_size;
    config.channels = opts.channels;
    config.quantized_tensors = names.empty() ? projection_names(config) : names;
    config.awq_channel_scales = opts.awq_scale && !config.quantized_tensors.empty();
    validate_config(config);

    ModelFile out;
    out.config = config;
    const auto alpha_grid = default_alpha_grid();
    for (const StoredTensor& t : fp16.tensors) {
        if (!config.is_quantized(t.name)) {
            out.tensors.push_back(t);
            continue;
        }
        if (t.quantized()) {
            throw FormatError(FormatErrorKind::Config,
                              fmt::format("tensor '{}' is already quantized", t.name));
        }
        std::vector<float> values(t.half().size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = to_float(t.half()[i]);
        }
        const TensorF32 w({t.shape.at(0), t.shape.at(1)}, std::move(values));
        QuantizedTensor q;
        if (config.awq_channel_scales) {
            const TensorF32 calib = synthetic_calibration(
                opts.calib_samples, t.shape[1], tensor_seed(opts.seed, t.name));
            const auto search = awq_search_channel_scales(w, calib, alpha_grid, opts.group_size);
            q = quantize_tensor(w, opts.group_size, std::span<const float>(search.scales));
        } else {
            q = quantize_tensor(w, opts.group_size);
        }
        out.tensors.push_back(StoredTensor{t.name, t.shape, layout_tensor(q, opts.channels)});
    }
    return out;
}

}  // namespace awq_edge
