#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "awq_edge/macro.hpp"
#include "awq_edge/tensor.hpp"

namespace awq_edge {

inline constexpr std::size_t kPeRows = 8;  // output channels per tile
inline constexpr std::size_t kPeCols = 8;  // input positions per tile

// One processing element: (q - z) * (activation * scale), FP32, in that association.
inline float pe_element(std::uint8_t qweight, std::uint8_t zero, float scale, float activation)
{
    return static_cast<float>(static_cast<int>(qweight) - static_cast<int>(zero)) *
           (activation * scale);
}

// ((p0+p1)+(p2+p3)) + ((p4+p5)+(p6+p7))
inline float adder_tree_8(std::span<const float, 8> p)
{
    return ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7]));
}

struct MacState {
    std::array<float, kPeRows> partial_sums{};
    std::size_t cursor = 0;  // input positions consumed for the current row block

    void reset()
    {
        partial_sums.fill(0.0f);
        cursor = 0;
    }
};

// Streams one macro through the 8x8 PE array: each tile of 8 input positions yields
// 64 PE products; per output channel the 8 products go through the adder tree and
// are added to that channel's accumulator. Tiles run in ascending position order.
void macro_mac(const MacroView& macro, std::span<const float> activations, MacState& state);

// Fused quantized matrix-vector product. Each of the schedule's logical channels
// owns whole row blocks; `workers` host threads (capped at the channel count) take
// channels round-robin. The result does not depend on `workers`.
void qmatvec(const PackedTensor& t, std::span<const float> x, std::span<float> y,
             std::size_t workers = 1);
std::vector<float> qmatvec(const PackedTensor& t, std::span<const float> x, std::size_t workers = 1);

// Row-wise qmatvec: X is [m x in], result is [m x out].
TensorF32 qmatmul(const PackedTensor& t, const TensorF32& x, std::size_t workers = 1);

}  // namespace awq_edge
