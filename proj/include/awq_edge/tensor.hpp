#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace awq_edge {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dense row-major FP32 tensor.
class TensorF32 {
public:
    TensorF32() = default;
    explicit TensorF32(std::vector<std::size_t> shape);
    TensorF32(std::vector<std::size_t> shape, std::vector<float> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    float& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
    float at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

    std::span<float> row(std::size_t r);
    std::span<const float> row(std::size_t r) const;

    std::string shape_string() const;

    friend bool operator==(const TensorF32&, const TensorF32&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

struct RopeParams {
    std::size_t head_dim = 64;
    double theta_base = 1'000'000.0;
    std::size_t max_position = 2048;
};

// c[i][j] = sum_t a[i][t] * b[t][j], FP32 accumulation in ascending t.
TensorF32 matmul_f32(const TensorF32& a, const TensorF32& b);

// y = W x for a row-major [out x in] matrix, same summation order as matmul_f32.
void matvec_f32(std::span<const float> weight, std::size_t out_features,
                std::span<const float> x, std::span<float> y);

std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gamma,
                           float eps = 1e-6f);

// Half-split pairing: lane i rotates with lane i + head_dim/2.
std::vector<float> rope_apply(std::span<const float> x, std::size_t position,
                              const RopeParams& params);
void rope_apply_inplace(std::span<float> x, std::size_t position, const RopeParams& params);

float silu(float x);

// In-place max-subtracted softmax.
void softmax_inplace(std::span<float> scores);

// keys/values: [positions x n_kv_heads x head_dim], q: [n_q_heads x head_dim].
// Returns the concatenated per-head outputs [n_q_heads x head_dim].
std::vector<float> causal_attention(std::span<const float> q, std::size_t n_q_heads,
                                    std::span<const float> keys,
                                    std::span<const float> values, std::size_t positions,
                                    std::size_t n_kv_heads, std::size_t head_dim);

}  // namespace awq_edge
