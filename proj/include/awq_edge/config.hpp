#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace awq_edge {

// Architecture hyperparameters, read from the JSON architecture file.
struct ModelConfig {
    std::size_t dim = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
    std::size_t ffn_hidden = 0;
    std::size_t vocab_size = 0;
    std::size_t group_size = 64;
    double rope_theta = 1'000'000.0;
    float rms_eps = 1e-6f;
    bool tie_embeddings = true;
    // names of the tensors stored as AWQ_MACRO streams; all others are FP16
    std::vector<std::string> quantized_tensors;
    bool awq_channel_scales = false;
    std::size_t channels = 4;

    std::size_t q_dim() const { return n_heads * head_dim; }
    std::size_t kv_dim() const { return n_kv_heads * head_dim; }
    bool is_quantized(const std::string& name) const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TensorRole {
    Embedding,
    Norm,
    Bias,
    Projection,
    OutputHead,
};

struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    TensorRole role;
    bool quantized = false;

    std::size_t elements() const;
};

namespace tensor_names {
inline const std::string kEmbedding = "tok_embeddings";
inline const std::string kFinalNorm = "final_norm";
inline const std::string kOutput = "output";
std::string layer(std::size_t layer, const char* leaf);
}  // namespace tensor_names

// Every tensor the config implies, in file order.
std::vector<TensorSpec> tensor_manifest(const ModelConfig& config);
// All per-layer projection matrices (q/k/v/o/gate/up/down).
std::vector<std::string> projection_names(const ModelConfig& config);

// Throws FormatError(Config) describing the first violated constraint.
void validate_config(const ModelConfig& config);

nlohmann::json config_to_json(const ModelConfig& config);
// Missing quantized_tensors means "all projections".
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::filesystem::path& path);

}  // namespace awq_edge
