#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "awq_edge/config.hpp"
#include "awq_edge/macro.hpp"
#include "awq_edge/model_file.hpp"
#include "awq_edge/tensor.hpp"
#include "awq_edge/trace.hpp"

namespace awq_edge {

class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultMaxSeq = 2048;

struct DenseWeight {
    std::size_t out_features = 0;
    std::size_t in_features = 0;
    std::vector<float> data;  // row-major [out x in]
};

// A projection: either an AWQ_MACRO stream run through the PE-array kernel or an
// unquantized FP32 matrix.
class Linear {
public:
    Linear() = default;
    explicit Linear(PackedTensor packed) : weight_(std::move(packed)) {}
    explicit Linear(DenseWeight dense) : weight_(std::move(dense)) {}

    std::size_t out_features() const;
    std::size_t in_features() const;
    bool quantized() const { return std::holds_alternative<PackedTensor>(weight_); }
    const PackedTensor& packed() const { return std::get<PackedTensor>(weight_); }
    const DenseWeight& dense() const { return std::get<DenseWeight>(weight_); }

    // y = W (x / awq_scale); the division only applies to AWQ-scaled tensors.
    void apply(std::span<const float> x, std::span<float> y, std::size_t workers) const;

private:
    std::variant<DenseWeight, PackedTensor> weight_;
};

struct LayerWeights {
    std::vector<float> attn_norm;
    Linear wq, wk, wv, wo;
    std::vector<float> bq, bk, bv;
    std::vector<float> ffn_norm;
    Linear w_gate, w_up, w_down;
};

// Immutable after construction; share freely across sessions and threads.
class Model {
public:
    static Model from_file(const ModelFile& file);

    const ModelConfig& config() const { return config_; }
    const std::vector<LayerWeights>& layers() const { return layers_; }
    std::span<const float> embedding() const { return embedding_; }
    std::span<const float> final_norm() const { return final_norm_; }
    bool tied_head() const { return !output_.has_value(); }
    const Linear* untied_head() const { return output_ ? &*output_ : nullptr; }
    // The classifier matrix; aliases embedding() when embeddings are tied.
    std::span<const float> head_weights() const;

private:
    ModelConfig config_;
    std::vector<float> embedding_;
    std::vector<LayerWeights> layers_;
    std::vector<float> final_norm_;
    std::optional<Linear> output_;
};

// Append-only per-layer key/value storage, [max_seq x n_kv_heads x head_dim] per layer.
class KvCache {
public:
    KvCache(const ModelConfig& config, std::size_t max_seq = kDefaultMaxSeq);

    std::size_t length() const { return length_; }
    std::size_t max_seq() const { return max_seq_; }
    std::size_t kv_dim() const { return kv_dim_; }

    std::span<const float> keys(std::size_t layer) const { return keys_[layer]; }
    std::span<const float> values(std::size_t layer) const { return values_[layer]; }

    // Writes the entry at `position`, which must be >= length() (never rewrites history).
    void write(std::size_t layer, std::size_t position, std::span<const float> k,
               std::span<const float> v);
    void advance(std::size_t n);

    friend bool operator==(const KvCache&, const KvCache&) = default;

private:
    std::size_t max_seq_;
    std::size_t kv_dim_;
    std::size_t length_ = 0;
    std::vector<std::vector<float>> keys_;
    std::vector<std::vector<float>> values_;
};

struct RunOptions {
    std::size_t workers = 1;
    ForwardTrace* trace = nullptr;
};

// One decoder layer for the token at `position` (== cache.length()); writes this
// layer's K/V into the cache but does not advance it.
std::vector<float> layer_forward(const Model& model, std::size_t layer, std::span<const float> x,
                                 KvCache& cache, std::size_t position,
                                 const RunOptions& opts = {});

// Runs all prompt tokens as matrix-matrix work, fills the cache, and returns the
// logits of the final position.
std::vector<float> prefill(const Model& model, KvCache& cache, std::span<const int> tokens,
                           const RunOptions& opts = {});

std::vector<float> decode_step(const Model& model, KvCache& cache, int token,
                               const RunOptions& opts = {});

struct Sampler {
    enum class Kind { Greedy, Temperature };
    Kind kind = Kind::Greedy;
    float temperature = 1.0f;
    std::uint64_t seed = 0;

    static Sampler greedy() { return {}; }
    static Sampler with_temperature(float t, std::uint64_t seed)
    {
        return {Kind::Temperature, t, seed};
    }
};

// Lowest index wins ties.
int argmax(std::span<const float> logits);

// Prefill, then n_new sampled tokens (the last sampled token is not fed back).
std::vector<int> generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                          const Sampler& sampler, const RunOptions& opts = {},
                          std::size_t max_seq = kDefaultMaxSeq);

// Byte-level tokenizer: one token per byte.
std::vector<int> byte_tokenize(std::string_view text);
std::string byte_detokenize(std::span<const int> tokens);

// Closed-form FLOP counts for prefilling seq_len tokens (logits for the last one only).
ForwardTrace count_flops(const ModelConfig& config, std::size_t seq_len);
// Prefill of prompt_len tokens followed by the decode steps generate() performs.
ForwardTrace count_generate_flops(const ModelConfig& config, std::size_t prompt_len,
                                  std::size_t n_new);

}  // namespace awq_edge
