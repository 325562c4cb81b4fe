#include "awq_edge/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "awq_edge/qmac.hpp"

namespace awq_edge {

// ---- trace -------------------------------------------------------------------

const char* op_description(OpKind kind)
{
    switch (kind) {
    case OpKind::EmbeddingCopy: return "Token Embedding copy + Layer init.";
    case OpKind::QkvProjection: return "Q/K/V Projection MAC operations";
    case OpKind::QkvBias: return "Q/K/V Bias addition";
    case OpKind::OutputProjection: return "Output projection + Residual Add";
    case OpKind::Attention: return "MHA computation (Concatenation)";
    case OpKind::FfnGateUp: return "FFN Gate Projection + Up Projection";
    case OpKind::FfnDown: return "FFN Down Projection + Residual Add";
    case OpKind::OutputHead: return "LM Head (tied embedding) MAC operations";
    case OpKind::Rope: return "Rotary Positional Encoding (RoPE) for Q/K";
    case OpKind::RmsNorm: return "Root Mean Square Normalization (RMSNorm)";
    case OpKind::SiluMul: return "SiLU Activation + Element-wise Multiplication";
    }
    return "?";
}

bool is_mac_op(OpKind kind)
{
    return kind == OpKind::QkvProjection || kind == OpKind::OutputProjection ||
           kind == OpKind::FfnGateUp || kind == OpKind::FfnDown || kind == OpKind::OutputHead;
}

bool is_nonlinear_op(OpKind kind)
{
    return kind == OpKind::Rope || kind == OpKind::RmsNorm || kind == OpKind::SiluMul;
}

std::uint64_t ForwardTrace::total_flops() const
{
    std::uint64_t total = 0;
    for (auto f : flops) {
        total += f;
    }
    return total;
}

std::uint64_t ForwardTrace::mac_flops() const
{
    std::uint64_t total = 0;
    for (OpKind k : kAllOps) {
        if (is_mac_op(k)) {
            total += flops_of(k);
        }
    }
    return total;
}

double ForwardTrace::mac_share() const
{
    const auto total = total_flops();
    return total == 0 ? 0.0 : static_cast<double>(mac_flops()) / static_cast<double>(total);
}

// ---- weights -----------------------------------------------------------------

std::size_t Linear::out_features() const
{
    return quantized() ? packed().out_channels : dense().out_features;
}

std::size_t Linear::in_features() const
{
    return quantized() ? packed().in_channels : dense().in_features;
}

void Linear::apply(std::span<const float> x, std::span<float> y, std::size_t workers) const
{
    if (!quantized()) {
        const auto& d = dense();
        matvec_f32(d.data, d.out_features, x, y);
        return;
    }
    const auto& p = packed();
    if (!p.has_awq_scale()) {
        qmatvec(p, x, y, workers);
        return;
    }
    if (x.size() != p.in_channels) {
        throw DimensionError("activation length does not match AWQ scale vector");
    }
    std::vector<float> xs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xs[i] = x[i] / p.awq_channel_scale[i];
    }
    qmatvec(p, xs, y, workers);
}

namespace {

std::vector<float> widen(const std::vector<Half>& h)
{
    std::vector<float> out(h.size());
    std::transform(h.begin(), h.end(), out.begin(), to_float);
    return out;
}

std::vector<float> load_vector(const ModelFile& f, const std::string& name)
{
    const auto& t = f.tensor(name);
    if (t.quantized()) {
        throw FormatError(FormatErrorKind::DirectoryInconsistent,
                          fmt::format("tensor '{}' must be FP16", name));
    }
    return widen(t.half());
}

Linear load_linear(const ModelFile& f, const std::string& name)
{
    const auto& t = f.tensor(name);
    if (t.quantized()) {
        return Linear(t.packed());
    }
    return Linear(DenseWeight{t.shape.at(0), t.shape.at(1), widen(t.half())});
}

}  // namespace

Model Model::from_file(const ModelFile& file)
{
    validate_config(file.config);
    Model m;
    m.config_ = file.config;
    m.embedding_ = load_vector(file, tensor_names::kEmbedding);
    for (std::size_t l = 0; l < file.config.n_layers; ++l) {
        using tensor_names::layer;
        LayerWeights w;
        w.attn_norm = load_vector(file, layer(l, "attn_norm"));
        w.wq = load_linear(file, layer(l, "wq"));
        w.wk = load_linear(file, layer(l, "wk"));
        w.wv = load_linear(file, layer(l, "wv"));
        w.bq = load_vector(file, layer(l, "bq"));
        w.bk = load_vector(file, layer(l, "bk"));
        w.bv = load_vector(file, layer(l, "bv"));
        w.wo = load_linear(file, layer(l, "wo"));
        w.ffn_norm = load_vector(file, layer(l, "ffn_norm"));
        w.w_gate = load_linear(file, layer(l, "w_gate"));
        w.w_up = load_linear(file, layer(l, "w_up"));
        w.w_down = load_linear(file, layer(l, "w_down"));
        m.layers_.push_back(std::move(w));
    }
    m.final_norm_ = load_vector(file, tensor_names::kFinalNorm);
    if (!file.config.tie_embeddings) {
        m.output_ = load_linear(file, tensor_names::kOutput);
    }
    return m;
}

std::span<const float> Model::head_weights() const
{
    if (output_ && !output_->quantized()) {
        return output_->dense().data;
    }
    return output_ ? std::span<const float>{} : std::span<const float>(embedding_);
}

// ---- kv cache ----------------------------------------------------------------

KvCache::KvCache(const ModelConfig& config, std::size_t max_seq)
    : max_seq_(max_seq), kv_dim_(config.kv_dim()),
      keys_(config.n_layers, std::vector<float>(max_seq * config.kv_dim())),
      values_(config.n_layers, std::vector<float>(max_seq * config.kv_dim()))
{
}

void KvCache::write(std::size_t layer, std::size_t position, std::span<const float> k,
                    std::span<const float> v)
{
    if (position < length_) {
        throw RuntimeError(fmt::format("kv cache is append-only: position {} < length {}",
                                       position, length_));
    }
    if (position >= max_seq_) {
        throw RuntimeError(fmt::format("kv cache overflow: position {} >= max_seq {}", position,
                                       max_seq_));
    }
    if (k.size() != kv_dim_ || v.size() != kv_dim_) {
        throw DimensionError("kv entry has the wrong width");
    }
    std::copy(k.begin(), k.end(), keys_.at(layer).begin() + position * kv_dim_);
    std::copy(v.begin(), v.end(), values_.at(layer).begin() + position * kv_dim_);
}

void KvCache::advance(std::size_t n)
{
    if (length_ + n > max_seq_) {
        throw RuntimeError("kv cache overflow");
    }
    length_ += n;
}

// ---- forward -----------------------------------------------------------------

namespace {

std::uint64_t linear_flops(const Linear& l)
{
    return 2ull * l.out_features() * l.in_features();
}

std::uint64_t rmsnorm_flops(std::size_t n) { return 4ull * n + 2; }

// Runs one layer over `rows` consecutive tokens starting at `start`. x is [rows x dim]
// and is updated in place.
void forward_rows(const Model& model, std::size_t layer, TensorF32& x, KvCache& cache,
                  std::size_t start, const RunOptions& opts)
{
    const ModelConfig& c = model.config();
    const LayerWeights& w = model.layers()[layer];
    const std::size_t rows = x.dim(0);
    const std::size_t hd = c.head_dim;
    ForwardTrace* tr = opts.trace;

    TensorF32 xn({rows, c.dim});
    {
        ScopedOp op(tr, OpKind::RmsNorm, rows * rmsnorm_flops(c.dim));
        for (std::size_t r = 0; r < rows; ++r) {
            const auto y = rmsnorm(x.row(r), w.attn_norm, c.rms_eps);
            std::copy(y.begin(), y.end(), xn.row(r).begin());
        }
    }

    TensorF32 q({rows, c.q_dim()}), k({rows, c.kv_dim()}), v({rows, c.kv_dim()});
    {
        ScopedOp op(tr, OpKind::QkvProjection,
                    rows * (linear_flops(w.wq) + linear_flops(w.wk) + linear_flops(w.wv)));
        for (std::size_t r = 0; r < rows; ++r) {
            w.wq.apply(xn.row(r), q.row(r), opts.workers);
            w.wk.apply(xn.row(r), k.row(r), opts.workers);
            w.wv.apply(xn.row(r), v.row(r), opts.workers);
        }
    }
    {
        ScopedOp op(tr, OpKind::QkvBias, rows * (c.q_dim() + 2 * c.kv_dim()));
        for (std::size_t r = 0; r < rows; ++r) {
            auto add = [](std::span<float> dst, const std::vector<float>& b) {
                for (std::size_t i = 0; i < dst.size(); ++i) {
                    dst[i] += b[i];
                }
            };
            add(q.row(r), w.bq);
            add(k.row(r), w.bk);
            add(v.row(r), w.bv);
        }
    }
    {
        ScopedOp op(tr, OpKind::Rope, rows * 3ull * hd * (c.n_heads + c.n_kv_heads));
        const RopeParams rope{hd, c.rope_theta, cache.max_seq()};
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t h = 0; h < c.n_heads; ++h) {
                rope_apply_inplace(q.row(r).subspan(h * hd, hd), start + r, rope);
            }
            for (std::size_t h = 0; h < c.n_kv_heads; ++h) {
                rope_apply_inplace(k.row(r).subspan(h * hd, hd), start + r, rope);
            }
        }
    }

    TensorF32 attn({rows, c.q_dim()});
    {
        std::uint64_t flops = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::uint64_t ctx = start + r + 1;
            flops += c.n_heads * (4ull * hd * ctx + 5ull * ctx);
        }
        ScopedOp op(tr, OpKind::Attention, flops);
        for (std::size_t r = 0; r < rows; ++r) {
            cache.write(layer, start + r, k.row(r), v.row(r));
        }
        for (std::size_t r = 0; r < rows; ++r) {
            const auto out = causal_attention(q.row(r), c.n_heads, cache.keys(layer),
                                              cache.values(layer), start + r + 1, c.n_kv_heads, hd);
            std::copy(out.begin(), out.end(), attn.row(r).begin());
        }
    }

    std::vector<float> tmp(c.dim);
    {
        ScopedOp op(tr, OpKind::OutputProjection, rows * (linear_flops(w.wo) + c.dim));
        for (std::size_t r = 0; r < rows; ++r) {
            w.wo.apply(attn.row(r), tmp, opts.workers);
            auto xr = x.row(r);
            for (std::size_t i = 0; i < c.dim; ++i) {
                xr[i] += tmp[i];
            }
        }
    }

    {
        ScopedOp op(tr, OpKind::RmsNorm, rows * rmsnorm_flops(c.dim));
        for (std::size_t r = 0; r < rows; ++r) {
            const auto y = rmsnorm(x.row(r), w.ffn_norm, c.rms_eps);
            std::copy(y.begin(), y.end(), xn.row(r).begin());
        }
    }
    TensorF32 gate({rows, c.ffn_hidden}), up({rows, c.ffn_hidden});
    {
        ScopedOp op(tr, OpKind::FfnGateUp, rows * (linear_flops(w.w_gate) + linear_flops(w.w_up)));
        for (std::size_t r = 0; r < rows; ++r) {
            w.w_gate.apply(xn.row(r), gate.row(r), opts.workers);
            w.w_up.apply(xn.row(r), up.row(r), opts.workers);
        }
    }
    {
        ScopedOp op(tr, OpKind::SiluMul, rows * 5ull * c.ffn_hidden);
        for (std::size_t r = 0; r < rows; ++r) {
            auto g = gate.row(r);
            const auto u = up.row(r);
            for (std::size_t i = 0; i < c.ffn_hidden; ++i) {
                g[i] = silu(g[i]) * u[i];
            }
        }
    }
    {
        ScopedOp op(tr, OpKind::FfnDown, rows * (linear_flops(w.w_down) + c.dim));
        for (std::size_t r = 0; r < rows; ++r) {
            w.w_down.apply(gate.row(r), tmp, opts.workers);
            auto xr = x.row(r);
            for (std::size_t i = 0; i < c.dim; ++i) {
                xr[i] += tmp[i];
            }
        }
    }
}

void check_token(const ModelConfig& c, int token)
{
    if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
        throw RuntimeError(fmt::format("token {} out of range [0, {})", token, c.vocab_size));
    }
}

TensorF32 embed(const Model& model, std::span<const int> tokens, const RunOptions& opts)
{
    const ModelConfig& c = model.config();
    for (int t : tokens) {
        check_token(c, t);
    }
    ScopedOp op(opts.trace, OpKind::EmbeddingCopy, 0);
    TensorF32 x({tokens.size(), c.dim});
    const auto emb = model.embedding();
    for (std::size_t r = 0; r < tokens.size(); ++r) {
        const auto src = emb.subspan(static_cast<std::size_t>(tokens[r]) * c.dim, c.dim);
        std::copy(src.begin(), src.end(), x.row(r).begin());
    }
    return x;
}

std::vector<float> logits_for(const Model& model, std::span<const float> x, const RunOptions& opts)
{
    const ModelConfig& c = model.config();
    std::vector<float> xn;
    {
        ScopedOp op(opts.trace, OpKind::RmsNorm, rmsnorm_flops(c.dim));
        xn = rmsnorm(x, model.final_norm(), c.rms_eps);
    }
    std::vector<float> logits(c.vocab_size);
    ScopedOp op(opts.trace, OpKind::OutputHead, 2ull * c.vocab_size * c.dim);
    if (const Linear* head = model.untied_head()) {
        head->apply(xn, logits, opts.workers);
    } else {
        matvec_f32(model.embedding(), c.vocab_size, xn, logits);
    }
    return logits;
}

}  // namespace

std::vector<float> layer_forward(const Model& model, std::size_t layer, std::span<const float> x,
                                 KvCache& cache, std::size_t position, const RunOptions& opts)
{
    const ModelConfig& c = model.config();
    if (layer >= c.n_layers) {
        throw RuntimeError(fmt::format("layer {} out of range", layer));
    }
    if (x.size() != c.dim) {
        throw DimensionError(fmt::format("layer input has {} elements, expected {}", x.size(), c.dim));
    }
    if (position != cache.length()) {
        throw RuntimeError(fmt::format("position {} must equal cache length {}", position,
                                       cache.length()));
    }
    TensorF32 rows({1, c.dim}, std::vector<float>(x.begin(), x.end()));
    forward_rows(model, layer, rows, cache, position, opts);
    auto out = rows.row(0);
    return {out.begin(), out.end()};
}

std::vector<float> prefill(const Model& model, KvCache& cache, std::span<const int> tokens,
                           const RunOptions& opts)
{
    if (tokens.empty()) {
        throw RuntimeError("prefill needs at least one token");
    }
    if (cache.length() + tokens.size() > cache.max_seq()) {
        throw RuntimeError(fmt::format("prompt of {} tokens exceeds max_seq {} (cache holds {})",
                                       tokens.size(), cache.max_seq(), cache.length()));
    }
    TensorF32 x = embed(model, tokens, opts);
    const std::size_t start = cache.length();
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        forward_rows(model, l, x, cache, start, opts);
    }
    cache.advance(tokens.size());
    return logits_for(model, x.row(tokens.size() - 1), opts);
}

std::vector<float> decode_step(const Model& model, KvCache& cache, int token, const RunOptions& opts)
{
    if (cache.length() >= cache.max_seq()) {
        throw RuntimeError(fmt::format("kv cache overflow: max_seq {} reached", cache.max_seq()));
    }
    const int tokens[1] = {token};
    TensorF32 x = embed(model, tokens, opts);
    const std::size_t pos = cache.length();
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        forward_rows(model, l, x, cache, pos, opts);
    }
    cache.advance(1);
    return logits_for(model, x.row(0), opts);
}

int argmax(std::span<const float> logits)
{
    if (logits.empty()) {
        throw RuntimeError("argmax of empty logits");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return static_cast<int>(best);
}

namespace {

int sample_temperature(std::span<const float> logits, float temperature, std::mt19937_64& rng)
{
    if (!(temperature > 0.0f)) {
        throw RuntimeError("temperature must be positive");
    }
    const float mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(static_cast<double>(logits[i] - mx) / temperature);
        sum += p[i];
    }
    // 53 random mantissa bits; avoids implementation-defined distribution objects
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(p.size() - 1);
}

}  // namespace

std::vector<int> generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                          const Sampler& sampler, const RunOptions& opts, std::size_t max_seq)
{
    KvCache cache(model.config(), max_seq);
    std::vector<float> logits = prefill(model, cache, prompt, opts);
    std::mt19937_64 rng(sampler.seed);
    std::vector<int> out;
    out.reserve(n_new);
    for (std::size_t i = 0; i < n_new; ++i) {
        const int token = sampler.kind == Sampler::Kind::Greedy
                              ? argmax(logits)
                              : sample_temperature(logits, sampler.temperature, rng);
        out.push_back(token);
        if (i + 1 < n_new) {
            logits = decode_step(model, cache, token, opts);
        }
    }
    return out;
}

std::vector<int> byte_tokenize(std::string_view text)
{
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char ch : text) {
        ids.push_back(static_cast<int>(static_cast<unsigned char>(ch)));
    }
    return ids;
}

std::string byte_detokenize(std::span<const int> tokens)
{
    std::string out;
    for (int t : tokens) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(t));
        } else {
            out += fmt::format("<|{}|>", t);
        }
    }
    return out;
}

// ---- analytic counts -----------------------------------------------------------

namespace {

void add_token(ForwardTrace& t, const ModelConfig& c, std::size_t position, bool with_head)
{
    const std::uint64_t dim = c.dim, q = c.q_dim(), kv = c.kv_dim(), ffn = c.ffn_hidden;
    const std::uint64_t hd = c.head_dim, ctx = position + 1;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        t.flops_of(OpKind::RmsNorm) += 2 * (4 * dim + 2);
        t.flops_of(OpKind::QkvProjection) += 2 * dim * (q + 2 * kv);
        t.flops_of(OpKind::QkvBias) += q + 2 * kv;
        t.flops_of(OpKind::Rope) += 6 * ((q + kv) / 2);
        t.flops_of(OpKind::Attention) += c.n_heads * (4 * hd * ctx + 5 * ctx);
        t.flops_of(OpKind::OutputProjection) += 2 * q * dim + dim;
        t.flops_of(OpKind::FfnGateUp) += 4 * dim * ffn;
        t.flops_of(OpKind::SiluMul) += 5 * ffn;
        t.flops_of(OpKind::FfnDown) += 2 * ffn * dim + dim;
    }
    if (with_head) {
        t.flops_of(OpKind::RmsNorm) += 4 * dim + 2;
        t.flops_of(OpKind::OutputHead) += 2 * c.vocab_size * dim;
    }
}

}  // namespace

ForwardTrace count_flops(const ModelConfig& config, std::size_t seq_len)
{
    ForwardTrace t;
    for (std::size_t p = 0; p < seq_len; ++p) {
        add_token(t, config, p, p + 1 == seq_len);
    }
    return t;
}

ForwardTrace count_generate_flops(const ModelConfig& config, std::size_t prompt_len,
                                  std::size_t n_new)
{
    ForwardTrace t = count_flops(config, prompt_len);
    for (std::size_t i = 1; i < n_new; ++i) {
        add_token(t, config, prompt_len + i - 1, true);
    }
    return t;
}

}  // namespace awq_edge
