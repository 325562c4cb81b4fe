#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>

namespace awq_edge {

// Latency-breakdown taxonomy of a decoder forward pass.
enum class OpKind : std::size_t {
    EmbeddingCopy,
    QkvProjection,
    QkvBias,
    OutputProjection,
    Attention,
    FfnGateUp,
    FfnDown,
    OutputHead,
    Rope,
    RmsNorm,
    SiluMul,
};

inline constexpr std::size_t kOpKindCount = 11;

const char* op_description(OpKind kind);
// Projection rows (matrix products) as opposed to non-linear or movement rows.
bool is_mac_op(OpKind kind);
bool is_nonlinear_op(OpKind kind);

inline constexpr std::array<OpKind, kOpKindCount> kAllOps = {
    OpKind::EmbeddingCopy, OpKind::QkvProjection, OpKind::QkvBias,  OpKind::OutputProjection,
    OpKind::Attention,     OpKind::FfnGateUp,     OpKind::FfnDown,  OpKind::OutputHead,
    OpKind::Rope,          OpKind::RmsNorm,       OpKind::SiluMul,
};

// Per-op FLOP counts (a multiply-accumulate counts as 2) and accumulated wall time.
struct ForwardTrace {
    std::array<std::uint64_t, kOpKindCount> flops{};
    std::array<std::chrono::nanoseconds, kOpKindCount> time{};

    std::uint64_t& flops_of(OpKind k) { return flops[static_cast<std::size_t>(k)]; }
    std::uint64_t flops_of(OpKind k) const { return flops[static_cast<std::size_t>(k)]; }
    std::chrono::nanoseconds& time_of(OpKind k) { return time[static_cast<std::size_t>(k)]; }
    std::chrono::nanoseconds time_of(OpKind k) const { return time[static_cast<std::size_t>(k)]; }

    std::uint64_t total_flops() const;
    std::uint64_t mac_flops() const;
    double mac_share() const;

    friend bool operator==(const ForwardTrace&, const ForwardTrace&) = default;
};

// Adds elapsed time and a FLOP count to a trace; a null trace makes it a no-op.
class ScopedOp {
public:
    ScopedOp(ForwardTrace* trace, OpKind kind, std::uint64_t flops)
        : trace_(trace), kind_(kind)
    {
        if (trace_) {
            trace_->flops_of(kind) += flops;
            start_ = std::chrono::steady_clock::now();
        }
    }
    ~ScopedOp()
    {
        if (trace_) {
            trace_->time_of(kind_) += std::chrono::steady_clock::now() - start_;
        }
    }
    ScopedOp(const ScopedOp&) = delete;
    ScopedOp& operator=(const ScopedOp&) = delete;

private:
    ForwardTrace* trace_;
    OpKind kind_;
    std::chrono::steady_clock::time_point start_{};
};

}  // namespace awq_edge
