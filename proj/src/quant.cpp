#include "awq_edge/quant.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace awq_edge {

float round_half_away(float v) { return std::round(v); }

namespace {

std::uint8_t clamp_code(float v)
{
    return static_cast<std::uint8_t>(std::clamp(v, 0.0f, static_cast<float>(kInt4Max)));
}

}  // namespace

QuantGroup quantize_group(std::span<const float> w)
{
    if (w.empty()) {
        throw QuantizationError("quantize_group: empty group");
    }
    float lo = 0.0f;
    float hi = 0.0f;
    for (float v : w) {
        if (!std::isfinite(v)) {
            throw QuantizationError("quantize_group: non-finite weight");
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    QuantGroup g;
    g.codes.resize(w.size());
    if (hi == lo) {
        // all zeros
        g.scale = kHalfMinPositive;
        g.zero = 8;
        std::fill(g.codes.begin(), g.codes.end(), std::uint8_t{8});
        return g;
    }

    Half scale = to_half((hi - lo) / static_cast<float>(kInt4Max));
    float s = to_float(scale);
    if (!std::isfinite(s)) {
        throw QuantizationError(
            fmt::format("quantize_group: range [{}, {}] overflows a half-precision scale", lo, hi));
    }
    if (s == 0.0f) {
        scale = kHalfMinPositive;
        s = to_float(scale);
    }
    g.scale = scale;
    g.zero = clamp_code(round_half_away(-lo / s));
    const float z = static_cast<float>(g.zero);
    for (std::size_t i = 0; i < w.size(); ++i) {
        g.codes[i] = clamp_code(round_half_away(w[i] / s) + z);
    }
    return g;
}

std::vector<float> dequantize_group(const QuantGroup& g)
{
    const float s = to_float(g.scale);
    std::vector<float> out(g.codes.size());
    for (std::size_t i = 0; i < g.codes.size(); ++i) {
        out[i] = static_cast<float>(static_cast<int>(g.codes[i]) - static_cast<int>(g.zero)) * s;
    }
    return out;
}

QuantizedTensor quantize_tensor(const TensorF32& weight, std::size_t group_size,
                                std::optional<std::span<const float>> channel_scale)
{
    if (weight.rank() != 2) {
        throw DimensionError("quantize_tensor expects a 2-D weight");
    }
    if (group_size == 0) {
        throw QuantizationError("group size must be positive");
    }
    const std::size_t out = weight.dim(0);
    const std::size_t in = weight.dim(1);
    if (in % group_size != 0) {
        throw QuantizationError(
            fmt::format("in_channels {} not divisible by group size {}", in, group_size));
    }
    if (channel_scale && channel_scale->size() != in) {
        throw DimensionError(fmt::format("channel scale length {} != in_channels {}",
                                         channel_scale->size(), in));
    }

    QuantizedTensor t;
    t.out_channels = out;
    t.in_channels = in;
    t.group_size = group_size;
    t.groups.reserve(out * (in / group_size));
    if (channel_scale) {
        for (float s : *channel_scale) {
            if (!(s > 0.0f) || !std::isfinite(s)) {
                throw QuantizationError("channel scales must be positive and finite");
            }
        }
        // stored scales are half-representable so the packed file reproduces them exactly
        auto& stored = t.awq_channel_scale.emplace();
        for (float s : *channel_scale) {
            stored.push_back(round_to_half(s));
        }
        if (std::any_of(stored.begin(), stored.end(),
                        [](float s) { return !(s > 0.0f) || !std::isfinite(s); })) {
            throw QuantizationError("channel scales must stay positive and finite in half precision");
        }
    }

    std::vector<float> buf(group_size);
    for (std::size_t o = 0; o < out; ++o) {
        const auto row = weight.row(o);
        for (std::size_t g = 0; g < in / group_size; ++g) {
            for (std::size_t i = 0; i < group_size; ++i) {
                const std::size_t c = g * group_size + i;
                buf[i] = t.awq_channel_scale ? row[c] * (*t.awq_channel_scale)[c] : row[c];
            }
            t.groups.push_back(quantize_group(buf));
        }
    }
    return t;
}

TensorF32 dequantize_tensor(const QuantizedTensor& t)
{
    TensorF32 w({t.out_channels, t.in_channels});
    for (std::size_t o = 0; o < t.out_channels; ++o) {
        for (std::size_t g = 0; g < t.groups_per_row(); ++g) {
            const auto vals = dequantize_group(t.group(o, g));
            std::copy(vals.begin(), vals.end(), w.row(o).begin() + g * t.group_size);
        }
    }
    return w;
}

TensorF32 effective_weight(const QuantizedTensor& t)
{
    TensorF32 w = dequantize_tensor(t);
    if (t.awq_channel_scale) {
        const auto& s = *t.awq_channel_scale;
        for (std::size_t o = 0; o < t.out_channels; ++o) {
            auto row = w.row(o);
            for (std::size_t c = 0; c < t.in_channels; ++c) {
                row[c] /= s[c];
            }
        }
    }
    return w;
}

std::vector<double> default_alpha_grid()
{
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) {
        grid.push_back(i * 0.05);
    }
    return grid;
}

double awq_output_mse(const TensorF32& weight, const TensorF32& calib, std::span<const float> scales,
                      std::size_t group_size)
{
    const std::size_t out = weight.dim(0);
    const std::size_t in = weight.dim(1);
    const QuantizedTensor q = quantize_tensor(weight, group_size, scales);
    const TensorF32 wq = dequantize_tensor(q);
    const auto& applied = *q.awq_channel_scale;

    std::vector<double> xs(in);
    double err = 0.0;
    for (std::size_t n = 0; n < calib.dim(0); ++n) {
        const auto x = calib.row(n);
        for (std::size_t c = 0; c < in; ++c) {
            xs[c] = static_cast<double>(x[c]) / applied[c];
        }
        for (std::size_t o = 0; o < out; ++o) {
            const auto wr = weight.row(o);
            const auto qr = wq.row(o);
            double ref = 0.0, hat = 0.0;
            for (std::size_t c = 0; c < in; ++c) {
                ref += static_cast<double>(x[c]) * wr[c];
                hat += xs[c] * qr[c];
            }
            err += (ref - hat) * (ref - hat);
        }
    }
    return err / static_cast<double>(calib.dim(0) * out);
}

AwqSearchResult awq_search_channel_scales(const TensorF32& weight, const TensorF32& calib,
                                          std::span<const double> alpha_grid,
                                          std::size_t group_size)
{
    if (weight.rank() != 2 || calib.rank() != 2 || calib.dim(1) != weight.dim(1)) {
        throw DimensionError(fmt::format("awq search shape mismatch: weight {} calib {}",
                                         weight.shape_string(), calib.shape_string()));
    }
    if (calib.dim(0) == 0) {
        throw QuantizationError("awq search needs at least one calibration sample");
    }
    if (alpha_grid.empty()) {
        throw QuantizationError("awq search needs a non-empty alpha grid");
    }
    const std::size_t in = weight.dim(1);

    std::vector<double> mean_abs(in, 0.0);
    for (std::size_t n = 0; n < calib.dim(0); ++n) {
        const auto x = calib.row(n);
        for (std::size_t c = 0; c < in; ++c) {
            mean_abs[c] += std::fabs(static_cast<double>(x[c]));
        }
    }
    double min_positive = 0.0;
    for (double& m : mean_abs) {
        m /= static_cast<double>(calib.dim(0));
        if (m > 0.0 && (min_positive == 0.0 || m < min_positive)) {
            min_positive = m;
        }
    }
    // dead channels borrow the smallest live magnitude; a fully dead input is uniform
    for (double& m : mean_abs) {
        if (m == 0.0) {
            m = min_positive > 0.0 ? min_positive : 1.0;
        }
    }
    double log_sum = 0.0;
    for (double m : mean_abs) {
        log_sum += std::log(m);
    }
    const double geomean = std::exp(log_sum / static_cast<double>(in));
    const bool uniform = std::all_of(mean_abs.begin(), mean_abs.end(),
                                     [&](double m) { return m == mean_abs.front(); });

    AwqSearchResult best;
    bool have_best = false;
    std::vector<float> candidate(in);
    for (double alpha : alpha_grid) {
        if (alpha < 0.0 || alpha > 1.0) {
            throw QuantizationError(fmt::format("alpha {} outside [0, 1]", alpha));
        }
        for (std::size_t c = 0; c < in; ++c) {
            const double raw = uniform ? 1.0 : std::pow(mean_abs[c] / geomean, alpha);
            candidate[c] = round_to_half(static_cast<float>(std::clamp(raw, 1e-4, 1e4)));
        }
        const double mse = awq_output_mse(weight, calib, candidate, group_size);
        best.alpha_mse.push_back(mse);
        const bool better = !have_best || mse < best.mse || (mse == best.mse && alpha < best.alpha);
        if (better) {
            best.mse = mse;
            best.alpha = alpha;
            best.scales = candidate;
            have_best = true;
        }
    }
    return best;
}

}  // namespace awq_edge
