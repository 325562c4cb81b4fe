#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "awq_edge/half.hpp"
#include "awq_edge/quant.hpp"

namespace awq_edge {

enum class FormatErrorKind {
    BadMagic,
    VersionMismatch,
    Truncated,
    DirectoryInconsistent,
    Corruption,
    Layout,
    Config,
    Io,
};

const char* to_string(FormatErrorKind kind);

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind)
    {
    }
    FormatErrorKind kind() const { return kind_; }

private:
    FormatErrorKind kind_;
};

inline constexpr std::size_t kStripBytes = 16;  // one 128-bit strip
inline constexpr std::size_t kMacroRows = 8;    // output channels per macro

// Layout of one AWQ_MACRO (all little-endian):
//   strips [0, GS/4)  qweights: 32-bit word p holds the 8 codes of input position p,
//                     nibble j (bits 4j..4j+3) = output channel j
//   strip  GS/4       8 half-precision scales, channel 0 first
//   strip  GS/4 + 1   8 zero nibbles in the low 32 bits, upper 96 bits zero
constexpr std::size_t macro_qweight_strips(std::size_t group_size) { return group_size / 4; }
constexpr std::size_t macro_bytes(std::size_t group_size)
{
    return (macro_qweight_strips(group_size) + 2) * kStripBytes;
}
constexpr double macro_bits_per_weight(std::size_t group_size)
{
    return static_cast<double>(macro_bytes(group_size) * 8) /
           static_cast<double>(group_size * kMacroRows);
}

void validate_macro_group_size(std::size_t group_size);

// Decoded macro contents; codes are channel-major: codes[j * GS + i] is output
// channel j at input position i.
struct MacroFields {
    std::size_t group_size = 0;
    std::vector<std::uint8_t> codes;
    std::array<Half, kMacroRows> scales{};
    std::array<std::uint8_t, kMacroRows> zeros{};

    friend bool operator==(const MacroFields&, const MacroFields&) = default;
};

// Read-only view over one packed macro inside a larger stream.
class MacroView {
public:
    MacroView(std::span<const std::uint8_t> bytes, std::size_t group_size);

    std::size_t group_size() const { return group_size_; }
    std::span<const std::uint8_t> bytes() const { return bytes_; }

    std::uint32_t qword(std::size_t position) const { return load_u32(position * 4); }
    Half scale(std::size_t channel) const;
    std::uint8_t zero(std::size_t channel) const
    {
        return static_cast<std::uint8_t>((load_u32(zero_offset()) >> (4 * channel)) & 0xfu);
    }
    bool padding_clear() const;

private:
    std::uint32_t load_u32(std::size_t offset) const
    {
        return static_cast<std::uint32_t>(bytes_[offset]) |
               (static_cast<std::uint32_t>(bytes_[offset + 1]) << 8) |
               (static_cast<std::uint32_t>(bytes_[offset + 2]) << 16) |
               (static_cast<std::uint32_t>(bytes_[offset + 3]) << 24);
    }
    std::size_t scale_offset() const { return macro_qweight_strips(group_size_) * kStripBytes; }
    std::size_t zero_offset() const { return scale_offset() + kStripBytes; }

    std::span<const std::uint8_t> bytes_;
    std::size_t group_size_;
};

struct AwqMacro {
    std::size_t group_size = 0;
    std::vector<std::uint8_t> bytes;

    MacroView view() const { return MacroView(bytes, group_size); }
    friend bool operator==(const AwqMacro&, const AwqMacro&) = default;
};

AwqMacro pack_macro(const MacroFields& fields);
void pack_macro_into(const MacroFields& fields, std::span<std::uint8_t> out);
// Throws FormatError(Corruption) if the zero-strip padding is not clear.
MacroFields unpack_macro(const MacroView& m);
inline MacroFields unpack_macro(const AwqMacro& m) { return unpack_macro(m.view()); }

// Assignment of macros to streaming channels. Row block r (output channels
// [8r, 8r+8)) goes to channel r mod channel_count; each channel streams its row
// blocks in ascending order, and each row block's input groups in ascending order.
// Channel streams are concatenated in channel order to form the tensor stream.
class ChannelSchedule {
public:
    struct Slot {
        std::size_t channel;
        std::size_t position;
        friend bool operator==(const Slot&, const Slot&) = default;
    };

    ChannelSchedule() = default;
    ChannelSchedule(std::size_t row_blocks, std::size_t groups_per_row, std::size_t channel_count);

    std::size_t channel_count() const { return channels_; }
    std::size_t row_blocks() const { return row_blocks_; }
    std::size_t groups_per_row() const { return groups_; }
    std::size_t macro_count() const { return row_blocks_ * groups_; }

    std::size_t blocks_on(std::size_t channel) const;
    std::size_t row_block_at(std::size_t channel, std::size_t k) const { return channel + k * channels_; }
    std::size_t channel_begin(std::size_t channel) const;

    Slot locate(std::size_t row_block, std::size_t group) const;
    std::size_t stream_index(std::size_t row_block, std::size_t group) const;

    friend bool operator==(const ChannelSchedule&, const ChannelSchedule&) = default;

private:
    std::size_t row_blocks_ = 0;
    std::size_t groups_ = 0;
    std::size_t channels_ = 1;
};

inline constexpr std::size_t kDefaultChannels = 4;

// A quantized linear layer in its streamed form.
struct PackedTensor {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t group_size = 0;
    ChannelSchedule schedule;
    std::vector<std::uint8_t> stream;
    std::vector<float> awq_channel_scale;  // empty when absent

    std::size_t macro_count() const { return schedule.macro_count(); }
    MacroView macro_at(std::size_t stream_index) const;
    MacroView macro(std::size_t row_block, std::size_t group) const
    {
        return macro_at(schedule.stream_index(row_block, group));
    }
    bool has_awq_scale() const { return !awq_channel_scale.empty(); }

    friend bool operator==(const PackedTensor&, const PackedTensor&) = default;
};

PackedTensor layout_tensor(const QuantizedTensor& t, std::size_t channel_count = kDefaultChannels);
QuantizedTensor reassemble_tensor(const PackedTensor& p);

}  // namespace awq_edge
