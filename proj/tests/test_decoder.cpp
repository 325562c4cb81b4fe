#include "doctest.h"

#include "awq_edge/decoder.hpp"
#include "awq_edge/synth.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

using namespace awq_edge;
using awq_edge::testing::logits_rel_err;
using awq_edge::testing::ReferenceModel;

namespace {

ModelConfig tiny_config()
{
    ModelConfig c;
    c.dim = 64;
    c.n_layers = 4;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.head_dim = 16;
    c.ffn_hidden = 128;
    c.vocab_size = 256;
    c.group_size = 64;
    return c;
}

ModelConfig micro_config()
{
    ModelConfig c;
    c.dim = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.head_dim = 8;
    c.ffn_hidden = 32;
    c.vocab_size = 40;
    c.group_size = 8;
    return c;
}

ModelFile quantized(const ModelConfig& c, bool awq, std::uint64_t seed = 3)
{
    QuantizeOptions opts;
    opts.group_size = c.group_size;
    opts.awq_scale = awq;
    opts.seed = seed;
    return quantize_model(synthesize_fp16_model(c, seed), opts);
}

// Zeroes every tensor whose name ends with one of the given leaves.
void zero_tensors(ModelFile& m, std::initializer_list<std::string_view> leaves)
{
    for (auto& t : m.tensors) {
        for (auto leaf : leaves) {
            if (t.name.ends_with(leaf)) {
                auto& h = std::get<std::vector<Half>>(t.data);
                std::fill(h.begin(), h.end(), Half{0});
            }
        }
    }
}

}  // namespace

TEST_CASE("layer_forward with zero projections passes the residual through")
{
    auto fp16 = synthesize_fp16_model(tiny_config(), 4);
    zero_tensors(fp16, {"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down", "bq", "bk", "bv"});
    for (bool quant : {false, true}) {
        const auto file = quant ? quantize_model(fp16, QuantizeOptions{}) : fp16;
        const Model model = Model::from_file(file);
        KvCache cache(model.config(), 16);
        testing::Rng rng(5);
        const auto x = rng.vec(64);
        CHECK(layer_forward(model, 0, x, cache, 0) == x);
    }
}

TEST_CASE("layer_forward depends on position")
{
    const Model model = Model::from_file(quantized(tiny_config(), false));
    testing::Rng rng(6);
    const auto x = rng.vec(64);
    KvCache a(model.config(), 8), b(model.config(), 8);
    const auto at0 = layer_forward(model, 0, x, a, 0);
    // position 1 with the same token cached at position 0
    layer_forward(model, 0, x, b, 0);
    b.advance(1);
    const auto at1 = layer_forward(model, 0, x, b, 1);
    CHECK(at0 != at1);
    CHECK_THROWS_AS(layer_forward(model, 0, x, b, 0), RuntimeError);
}

TEST_CASE("prefill and decode agree")
{
    for (bool awq : {false, true}) {
        const Model model = Model::from_file(quantized(tiny_config(), awq));
        const std::vector<int> prompt{17, 200, 3, 99, 255, 0, 42};

        SUBCASE("single token prefill is one decode step")
        {
            KvCache a(model.config()), b(model.config());
            CHECK(prefill(model, a, std::span(prompt).first(1)) == decode_step(model, b, prompt[0]));
            CHECK(a == b);
        }
        SUBCASE("batched prefill vs step-by-step decode")
        {
            KvCache a(model.config()), b(model.config());
            const auto batch = prefill(model, a, prompt);
            std::vector<float> step;
            for (int t : prompt) {
                step = decode_step(model, b, t);
            }
            CHECK(testing::max_abs_diff(batch, step) <= 1e-6);
            CHECK(a.length() == prompt.size());
            CHECK(testing::max_abs_diff(a.keys(2), b.keys(2)) <= 1e-6);
        }
    }
}

TEST_CASE("runtime matches the reference decoder")
{
    const std::vector<int> prompt{5, 9, 1, 30, 12, 7};
    auto check = [&](const ModelFile& file) {
        const Model model = Model::from_file(file);
        ReferenceModel ref(file);
        KvCache cache(model.config());
        double worst = 0.0;
        for (int t : prompt) {
            const auto got = decode_step(model, cache, t);
            const auto want = ref.step(t);
            worst = std::max(worst, logits_rel_err(got, want));
        }
        return worst;
    };
    SUBCASE("micro config at GS 8")
    {
        CHECK(check(quantized(micro_config(), false)) <= 1e-4);
        CHECK(check(quantized(micro_config(), true)) <= 1e-4);
    }
    SUBCASE("tiny config")
    {
        CHECK(check(quantized(tiny_config(), false)) <= 1e-4);
        CHECK(check(quantized(tiny_config(), true)) <= 1e-4);
    }
    SUBCASE("unquantized, untied head")
    {
        auto c = tiny_config();
        c.tie_embeddings = false;
        CHECK(check(synthesize_fp16_model(c, 8)) <= 1e-4);
        QuantizeOptions opts;
        auto names = projection_names(c);
        names.push_back("output");
        CHECK(check(quantize_model(synthesize_fp16_model(c, 8), opts, names)) <= 1e-4);
    }
}

TEST_CASE("decode_step")
{
    const Model model = Model::from_file(quantized(tiny_config(), true));
    SUBCASE("deterministic given a cloned cache")
    {
        KvCache cache(model.config());
        prefill(model, cache, std::vector<int>{1, 2, 3});
        KvCache clone = cache;
        CHECK(decode_step(model, cache, 4) == decode_step(model, clone, 4));
        CHECK(cache == clone);
    }
    SUBCASE("errors")
    {
        KvCache cache(model.config(), 2);
        CHECK_THROWS_AS(decode_step(model, cache, 256), RuntimeError);
        CHECK_THROWS_AS(decode_step(model, cache, -1), RuntimeError);
        CHECK_THROWS_AS(prefill(model, cache, std::vector<int>{1, 2, 3}), RuntimeError);
        CHECK_THROWS_AS(prefill(model, cache, std::vector<int>{}), RuntimeError);
        decode_step(model, cache, 1);
        decode_step(model, cache, 1);
        CHECK_THROWS_AS(decode_step(model, cache, 1), RuntimeError);
        CHECK(cache.length() == 2);
    }
    SUBCASE("all-zero weights give equal logits")
    {
        auto fp16 = synthesize_fp16_model(tiny_config(), 9);
        for (auto& t : fp16.tensors) {
            auto& h = std::get<std::vector<Half>>(t.data);
            std::fill(h.begin(), h.end(), Half{0});
        }
        const Model zero = Model::from_file(quantize_model(fp16, QuantizeOptions{}));
        KvCache cache(zero.config());
        const auto logits = decode_step(zero, cache, 77);
        for (float v : logits) {
            CHECK(v == logits[0]);
        }
        CHECK(argmax(logits) == 0);
    }
}

TEST_CASE("KvCache is append-only")
{
    const auto c = tiny_config();
    KvCache cache(c, 4);
    const std::vector<float> kv(c.kv_dim(), 1.0f);
    cache.write(0, 0, kv, kv);
    cache.advance(1);
    CHECK_THROWS_AS(cache.write(0, 0, kv, kv), RuntimeError);
    CHECK_THROWS_AS(cache.advance(4), RuntimeError);
    CHECK_THROWS_AS(cache.write(0, 4, kv, kv), RuntimeError);
}

TEST_CASE("sampling")
{
    CHECK(argmax(std::vector<float>{1, 3, 3, 2}) == 1);
    CHECK(argmax(std::vector<float>(10, 0.5f)) == 0);

    const Model model = Model::from_file(quantized(tiny_config(), false));
    const auto prompt = byte_tokenize("hi");
    CHECK(generate(model, prompt, 0, Sampler::greedy()).empty());

    const auto g1 = generate(model, prompt, 6, Sampler::greedy());
    CHECK(g1.size() == 6);
    CHECK(generate(model, prompt, 6, Sampler::greedy()) == g1);

    // greedy generation is the argmax chain of decode steps
    KvCache cache(model.config());
    auto logits = prefill(model, cache, prompt);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        CHECK(argmax(logits) == g1[i]);
        logits = decode_step(model, cache, g1[i]);
    }

    const auto t1 = generate(model, prompt, 8, Sampler::with_temperature(1.5f, 99));
    CHECK(generate(model, prompt, 8, Sampler::with_temperature(1.5f, 99)) == t1);
    for (int t : t1) {
        CHECK(t >= 0);
        CHECK(t < 256);
    }
    for (std::size_t w : {2u, 4u}) {
        RunOptions opts;
        opts.workers = w;
        CHECK(generate(model, prompt, 6, Sampler::greedy(), opts) == g1);
        CHECK(generate(model, prompt, 8, Sampler::with_temperature(1.5f, 99), opts) == t1);
    }
    CHECK_THROWS_AS(generate(model, prompt, 2, Sampler::with_temperature(0.0f, 1)), RuntimeError);
}

TEST_CASE("byte tokenizer")
{
    const auto ids = byte_tokenize("A\xff");
    CHECK(ids == std::vector<int>{65, 255});
    CHECK(byte_detokenize(ids) == "A\xff");
    CHECK(byte_detokenize(std::vector<int>{104, 300}) == "h<|300|>");
}

TEST_CASE("tied embeddings share storage")
{
    const Model model = Model::from_file(quantized(tiny_config(), false));
    CHECK(model.tied_head());
    CHECK(model.head_weights().data() == model.embedding().data());
    const auto file = quantized(tiny_config(), false);
    CHECK(std::none_of(file.tensors.begin(), file.tensors.end(),
                       [](const auto& t) { return t.name == "output"; }));
}

TEST_CASE("count_flops")
{
    SUBCASE("hand arithmetic, minimal config")
    {
        ModelConfig c;
        c.dim = 2;
        c.n_layers = 1;
        c.n_heads = 1;
        c.n_kv_heads = 1;
        c.head_dim = 2;
        c.ffn_hidden = 3;
        c.vocab_size = 5;
        const auto t = count_flops(c, 1);
        CHECK(t.flops_of(OpKind::EmbeddingCopy) == 0);
        CHECK(t.flops_of(OpKind::QkvProjection) == 2 * 2 * (2 + 2 + 2));
        CHECK(t.flops_of(OpKind::QkvBias) == 6);
        CHECK(t.flops_of(OpKind::Rope) == 3 * 2 * 2);
        CHECK(t.flops_of(OpKind::Attention) == 4 * 2 * 1 + 5 * 1);
        CHECK(t.flops_of(OpKind::OutputProjection) == 2 * 2 * 2 + 2);
        CHECK(t.flops_of(OpKind::FfnGateUp) == 4 * 2 * 3);
        CHECK(t.flops_of(OpKind::SiluMul) == 5 * 3);
        CHECK(t.flops_of(OpKind::FfnDown) == 2 * 3 * 2 + 2);
        CHECK(t.flops_of(OpKind::RmsNorm) == 3 * (4 * 2 + 2));
        CHECK(t.flops_of(OpKind::OutputHead) == 2 * 5 * 2);
    }
    SUBCASE("doubling ffn_hidden doubles gate+up")
    {
        auto c = tiny_config();
        const auto a = count_flops(c, 7);
        c.ffn_hidden *= 2;
        const auto b = count_flops(c, 7);
        CHECK(b.flops_of(OpKind::FfnGateUp) == 2 * a.flops_of(OpKind::FfnGateUp));
    }
    SUBCASE("instrumented forward pass matches the closed form")
    {
        const Model model = Model::from_file(quantized(tiny_config(), true));
        const std::vector<int> prompt{1, 2, 3, 4, 5};
        ForwardTrace trace;
        RunOptions opts;
        opts.trace = &trace;
        KvCache cache(model.config());
        prefill(model, cache, prompt, opts);
        CHECK(trace.flops == count_flops(model.config(), prompt.size()).flops);

        ForwardTrace gen;
        opts.trace = &gen;
        generate(model, prompt, 4, Sampler::greedy(), opts);
        CHECK(gen.flops == count_generate_flops(model.config(), prompt.size(), 4).flops);
    }
    SUBCASE("MAC share on the 0.5B-like shape")
    {
        const ModelConfig c = load_config(AWQ_EDGE_CONFIG_DIR "/qwen2.5-0.5b-like.json");
        const auto t = count_flops(c, 1);
        CHECK(t.mac_share() >= 0.90);
        CHECK(t.total_flops() == t.mac_flops() + t.flops_of(OpKind::QkvBias) +
                                     t.flops_of(OpKind::Attention) + t.flops_of(OpKind::Rope) +
                                     t.flops_of(OpKind::RmsNorm) + t.flops_of(OpKind::SiluMul));
    }
}
