#include "awq_edge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

namespace awq_edge {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

}  // namespace

TensorF32::TensorF32(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(element_count(shape_), 0.0f)
{
}

TensorF32::TensorF32(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != element_count(shape_)) {
        throw DimensionError(fmt::format("tensor data length {} does not match shape {}",
                                         data_.size(), shape_string()));
    }
}

std::span<float> TensorF32::row(std::size_t r)
{
    const std::size_t cols = shape_.back();
    return std::span<float>(data_).subspan(r * cols, cols);
}

std::span<const float> TensorF32::row(std::size_t r) const
{
    const std::size_t cols = shape_.back();
    return std::span<const float>(data_).subspan(r * cols, cols);
}

std::string TensorF32::shape_string() const
{
    return fmt::format("[{}]", fmt::join(shape_, "x"));
}

TensorF32 matmul_f32(const TensorF32& a, const TensorF32& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError(fmt::format("matmul shape mismatch: {} x {}", a.shape_string(),
                                         b.shape_string()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorF32 c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t t = 0; t < k; ++t) {
                acc += a.at(i, t) * b.at(t, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

void matvec_f32(std::span<const float> weight, std::size_t out_features,
                std::span<const float> x, std::span<float> y)
{
    const std::size_t in_features = x.size();
    if (weight.size() != out_features * in_features || y.size() != out_features) {
        throw DimensionError(fmt::format("matvec shape mismatch: weight {} elements, [{}x{}]",
                                         weight.size(), out_features, in_features));
    }
    for (std::size_t o = 0; o < out_features; ++o) {
        const float* w = weight.data() + o * in_features;
        float acc = 0.0f;
        for (std::size_t t = 0; t < in_features; ++t) {
            acc += w[t] * x[t];
        }
        y[o] = acc;
    }
}

std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gamma, float eps)
{
    if (x.size() != gamma.size()) {
        throw DimensionError(
            fmt::format("rmsnorm length mismatch: x {} vs gamma {}", x.size(), gamma.size()));
    }
    if (!(eps > 0.0f)) {
        throw std::invalid_argument("rmsnorm eps must be positive");
    }
    float ss = 0.0f;
    for (float v : x) {
        ss += v * v;
    }
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + eps);
    std::vector<float> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = gamma[i] * (x[i] * inv);
    }
    return y;
}

void rope_apply_inplace(std::span<float> x, std::size_t position, const RopeParams& params)
{
    if (params.head_dim % 2 != 0) {
        throw DimensionError(fmt::format("rope head_dim {} must be even", params.head_dim));
    }
    if (x.size() != params.head_dim) {
        throw DimensionError(
            fmt::format("rope input length {} != head_dim {}", x.size(), params.head_dim));
    }
    const std::size_t half = params.head_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(params.theta_base, -2.0 * static_cast<double>(i) /
                                                            static_cast<double>(params.head_dim));
        const double angle = static_cast<double>(position) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float a = x[i];
        const float b = x[i + half];
        x[i] = a * c - b * s;
        x[i + half] = a * s + b * c;
    }
}

std::vector<float> rope_apply(std::span<const float> x, std::size_t position,
                              const RopeParams& params)
{
    std::vector<float> y(x.begin(), x.end());
    rope_apply_inplace(y, position, params);
    return y;
}

float silu(float x)
{
    // 1/(1+e^-x) underflows cleanly to 0 for very negative x and to 1 for large x.
    return x / (1.0f + std::exp(-x));
}

void softmax_inplace(std::span<float> scores)
{
    if (scores.empty()) {
        return;
    }
    const float mx = *std::max_element(scores.begin(), scores.end());
    float sum = 0.0f;
    for (float& s : scores) {
        s = std::exp(s - mx);
        sum += s;
    }
    const float inv = 1.0f / sum;
    for (float& s : scores) {
        s *= inv;
    }
}

std::vector<float> causal_attention(std::span<const float> q, std::size_t n_q_heads,
                                    std::span<const float> keys,
                                    std::span<const float> values, std::size_t positions,
                                    std::size_t n_kv_heads, std::size_t head_dim)
{
    if (n_kv_heads == 0 || n_q_heads % n_kv_heads != 0) {
        throw DimensionError(fmt::format("{} query heads not divisible by {} kv heads",
                                         n_q_heads, n_kv_heads));
    }
    if (positions == 0) {
        throw DimensionError("attention over an empty cache");
    }
    const std::size_t kv_stride = n_kv_heads * head_dim;
    if (q.size() != n_q_heads * head_dim || keys.size() < positions * kv_stride ||
        values.size() < positions * kv_stride) {
        throw DimensionError("attention operand sizes do not match head layout");
    }

    const std::size_t group = n_q_heads / n_kv_heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
    std::vector<float> out(n_q_heads * head_dim, 0.0f);
    std::vector<float> scores(positions);

    for (std::size_t h = 0; h < n_q_heads; ++h) {
        const std::size_t g = h / group;
        const float* qh = q.data() + h * head_dim;
        for (std::size_t p = 0; p < positions; ++p) {
            const float* k = keys.data() + p * kv_stride + g * head_dim;
            float dot = 0.0f;
            for (std::size_t d = 0; d < head_dim; ++d) {
                dot += qh[d] * k[d];
            }
            scores[p] = dot * inv_sqrt;
        }
        softmax_inplace(scores);
        float* oh = out.data() + h * head_dim;
        for (std::size_t p = 0; p < positions; ++p) {
            const float* v = values.data() + p * kv_stride + g * head_dim;
            const float w = scores[p];
            for (std::size_t d = 0; d < head_dim; ++d) {
                oh[d] += w * v[d];
            }
        }
    }
    return out;
}

}  // namespace awq_edge
