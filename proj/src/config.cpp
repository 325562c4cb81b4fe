#include "awq_edge/config.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "awq_edge/macro.hpp"

namespace awq_edge {

std::size_t TensorSpec::elements() const
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

bool ModelConfig::is_quantized(const std::string& name) const
{
    return std::find(quantized_tensors.begin(), quantized_tensors.end(), name) !=
           quantized_tensors.end();
}

std::string tensor_names::layer(std::size_t layer, const char* leaf)
{
    return fmt::format("layers.{}.{}", layer, leaf);
}

std::vector<TensorSpec> tensor_manifest(const ModelConfig& c)
{
    using tensor_names::layer;
    std::vector<TensorSpec> m;
    auto add = [&](std::string name, std::vector<std::size_t> shape, TensorRole role) {
        const bool q = c.is_quantized(name);
        m.push_back(TensorSpec{std::move(name), std::move(shape), role, q});
    };
    add(tensor_names::kEmbedding, {c.vocab_size, c.dim}, TensorRole::Embedding);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        add(layer(l, "attn_norm"), {c.dim}, TensorRole::Norm);
        add(layer(l, "wq"), {c.q_dim(), c.dim}, TensorRole::Projection);
        add(layer(l, "bq"), {c.q_dim()}, TensorRole::Bias);
        add(layer(l, "wk"), {c.kv_dim(), c.dim}, TensorRole::Projection);
        add(layer(l, "bk"), {c.kv_dim()}, TensorRole::Bias);
        add(layer(l, "wv"), {c.kv_dim(), c.dim}, TensorRole::Projection);
        add(layer(l, "bv"), {c.kv_dim()}, TensorRole::Bias);
        add(layer(l, "wo"), {c.dim, c.q_dim()}, TensorRole::Projection);
        add(layer(l, "ffn_norm"), {c.dim}, TensorRole::Norm);
        add(layer(l, "w_gate"), {c.ffn_hidden, c.dim}, TensorRole::Projection);
        add(layer(l, "w_up"), {c.ffn_hidden, c.dim}, TensorRole::Projection);
        add(layer(l, "w_down"), {c.dim, c.ffn_hidden}, TensorRole::Projection);
    }
    add(tensor_names::kFinalNorm, {c.dim}, TensorRole::Norm);
    if (!c.tie_embeddings) {
        add(tensor_names::kOutput, {c.vocab_size, c.dim}, TensorRole::OutputHead);
    }
    return m;
}

std::vector<std::string> projection_names(const ModelConfig& c)
{
    std::vector<std::string> names;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (const char* leaf : {"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"}) {
            names.push_back(tensor_names::layer(l, leaf));
        }
    }
    return names;
}

void validate_config(const ModelConfig& c)
{
    auto fail = [](const std::string& msg) { throw FormatError(FormatErrorKind::Config, msg); };
    if (c.dim == 0 || c.n_heads == 0 || c.n_kv_heads == 0 || c.head_dim == 0 ||
        c.ffn_hidden == 0 || c.vocab_size == 0 || c.group_size == 0 || c.channels == 0) {
        fail("config dimensions must be positive");
    }
    if (c.n_heads % c.n_kv_heads != 0) {
        fail(fmt::format("n_heads {} not divisible by n_kv_heads {}", c.n_heads, c.n_kv_heads));
    }
    if (c.dim != c.q_dim()) {
        fail(fmt::format("dim {} != n_heads * head_dim = {}", c.dim, c.q_dim()));
    }
    if (c.head_dim % 2 != 0) {
        fail(fmt::format("head_dim {} must be even", c.head_dim));
    }
    if (!(c.rope_theta > 0.0) || !(c.rms_eps > 0.0f)) {
        fail("rope_theta and rms_eps must be positive");
    }
    const auto manifest = tensor_manifest(c);
    std::set<std::string> known;
    for (const auto& t : manifest) {
        known.insert(t.name);
    }
    for (const auto& name : c.quantized_tensors) {
        if (!known.contains(name)) {
            fail(fmt::format("quantized tensor '{}' is not part of this architecture", name));
        }
    }
    if (!c.quantized_tensors.empty() && c.group_size % 8 != 0) {
        fail(fmt::format("group_size {} must be a multiple of 8", c.group_size));
    }
    for (const auto& t : manifest) {
        if (!t.quantized) {
            continue;
        }
        if (t.shape.size() != 2 || t.role == TensorRole::Embedding) {
            fail(fmt::format("tensor '{}' cannot be quantized", t.name));
        }
        if (t.shape[0] % kMacroRows != 0 || t.shape[1] % c.group_size != 0) {
            fail(fmt::format("tensor '{}' [{}x{}] needs out % 8 == 0 and in % {} == 0", t.name,
                             t.shape[0], t.shape[1], c.group_size));
        }
    }
}

nlohmann::json config_to_json(const ModelConfig& c)
{
    return nlohmann::json{
        {"format_version", 1},
        {"dim", c.dim},
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"n_kv_heads", c.n_kv_heads},
        {"head_dim", c.head_dim},
        {"ffn_hidden", c.ffn_hidden},
        {"vocab_size", c.vocab_size},
        {"group_size", c.group_size},
        {"rope_theta", c.rope_theta},
        {"rms_eps", c.rms_eps},
        {"tie_embeddings", c.tie_embeddings},
        {"awq_channel_scales", c.awq_channel_scales},
        {"channels", c.channels},
        {"quantized_tensors", c.quantized_tensors},
    };
}

ModelConfig config_from_json(const nlohmann::json& j)
{
    ModelConfig c;
    try {
        c.dim = j.at("dim").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
        c.head_dim = j.value("head_dim", c.n_heads ? c.dim / c.n_heads : 0);
        c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.group_size = j.value("group_size", c.group_size);
        c.rope_theta = j.value("rope_theta", c.rope_theta);
        c.rms_eps = j.value("rms_eps", c.rms_eps);
        c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
        c.awq_channel_scales = j.value("awq_channel_scales", false);
        c.channels = j.value("channels", c.channels);
        if (j.contains("quantized_tensors")) {
            c.quantized_tensors = j.at("quantized_tensors").get<std::vector<std::string>>();
        } else {
            c.quantized_tensors = projection_names(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Config, fmt::format("architecture JSON: {}", e.what()));
    }
    validate_config(c);
    return c;
}

ModelConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError(FormatErrorKind::Io,
                          fmt::format("cannot open config '{}'", path.string()));
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Config,
                          fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
    }
    return config_from_json(j);
}

}  // namespace awq_edge
