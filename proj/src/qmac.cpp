#include "awq_edge/qmac.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>

namespace awq_edge {

void macro_mac(const MacroView& macro, std::span<const float> activations, MacState& state)
{
    const std::size_t gs = macro.group_size();
    if (activations.size() != gs) {
        throw DimensionError(fmt::format("macro_mac: {} activations for a GS={} macro",
                                         activations.size(), gs));
    }
    std::array<float, kPeRows> scale{};
    std::array<std::uint8_t, kPeRows> zero{};
    for (std::size_t j = 0; j < kPeRows; ++j) {
        scale[j] = to_float(macro.scale(j));
        zero[j] = macro.zero(j);
    }

    std::array<std::uint32_t, kPeCols> words{};
    std::array<float, kPeCols> products{};
    for (std::size_t tile = 0; tile < gs / kPeCols; ++tile) {
        const std::size_t base = tile * kPeCols;
        for (std::size_t i = 0; i < kPeCols; ++i) {
            words[i] = macro.qword(base + i);
        }
        for (std::size_t j = 0; j < kPeRows; ++j) {
            for (std::size_t i = 0; i < kPeCols; ++i) {
                const auto q = static_cast<std::uint8_t>((words[i] >> (4 * j)) & 0xfu);
                products[i] = pe_element(q, zero[j], scale[j], activations[base + i]);
            }
            state.partial_sums[j] += adder_tree_8(products);
        }
    }
    state.cursor += gs;
}

namespace {

void check_operands(const PackedTensor& t, std::size_t x_len, std::size_t y_len)
{
    const auto& s = t.schedule;
    if (t.group_size == 0 || s.row_blocks() * kMacroRows != t.out_channels ||
        s.groups_per_row() * t.group_size != t.in_channels ||
        t.stream.size() != s.macro_count() * macro_bytes(t.group_size)) {
        throw FormatError(FormatErrorKind::Layout,
                          fmt::format("schedule ({} row blocks x {} groups) does not match tensor "
                                      "[{}x{}] GS={}",
                                      s.row_blocks(), s.groups_per_row(), t.out_channels,
                                      t.in_channels, t.group_size));
    }
    if (x_len != t.in_channels || y_len != t.out_channels) {
        throw DimensionError(fmt::format("qmatvec: x has {} (need {}), y has {} (need {})", x_len,
                                         t.in_channels, y_len, t.out_channels));
    }
}

void run_channel(const PackedTensor& t, std::size_t channel, std::span<const float> x,
                 std::span<float> y)
{
    const auto& s = t.schedule;
    const std::size_t gs = t.group_size;
    std::size_t index = s.channel_begin(channel);
    MacState state;
    for (std::size_t k = 0; k < s.blocks_on(channel); ++k) {
        const std::size_t r = s.row_block_at(channel, k);
        state.reset();
        for (std::size_t g = 0; g < s.groups_per_row(); ++g) {
            macro_mac(t.macro_at(index++), x.subspan(g * gs, gs), state);
        }
        std::copy(state.partial_sums.begin(), state.partial_sums.end(),
                  y.begin() + r * kMacroRows);
    }
}

}  // namespace

void qmatvec(const PackedTensor& t, std::span<const float> x, std::span<float> y,
             std::size_t workers)
{
    check_operands(t, x.size(), y.size());
    const std::size_t channels = t.schedule.channel_count();
    workers = std::clamp<std::size_t>(workers, 1, channels);
    if (workers == 1) {
        for (std::size_t c = 0; c < channels; ++c) {
            run_channel(t, c, x, y);
        }
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t c = w; c < channels; c += workers) {
                run_channel(t, c, x, y);
            }
        });
    }
    for (std::size_t c = 0; c < channels; c += workers) {
        run_channel(t, c, x, y);
    }
}

std::vector<float> qmatvec(const PackedTensor& t, std::span<const float> x, std::size_t workers)
{
    std::vector<float> y(t.out_channels);
    qmatvec(t, x, y, workers);
    return y;
}

TensorF32 qmatmul(const PackedTensor& t, const TensorF32& x, std::size_t workers)
{
    if (x.rank() != 2) {
        throw DimensionError("qmatmul expects a 2-D activation matrix");
    }
    TensorF32 y({x.dim(0), t.out_channels});
    for (std::size_t m = 0; m < x.dim(0); ++m) {
        qmatvec(t, x.row(m), y.row(m), workers);
    }
    return y;
}

}  // namespace awq_edge
