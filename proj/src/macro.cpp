#include "awq_edge/macro.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace awq_edge {

const char* to_string(FormatErrorKind kind)
{
    switch (kind) {
    case FormatErrorKind::BadMagic: return "bad-magic";
    case FormatErrorKind::VersionMismatch: return "version-mismatch";
    case FormatErrorKind::Truncated: return "truncated";
    case FormatErrorKind::DirectoryInconsistent: return "directory-inconsistent";
    case FormatErrorKind::Corruption: return "corruption";
    case FormatErrorKind::Layout: return "layout";
    case FormatErrorKind::Config: return "config";
    case FormatErrorKind::Io: return "io";
    }
    return "unknown";
}

void validate_macro_group_size(std::size_t group_size)
{
    if (group_size == 0 || group_size % 8 != 0) {
        throw FormatError(FormatErrorKind::Layout,
                          fmt::format("group size {} must be a positive multiple of 8", group_size));
    }
}

MacroView::MacroView(std::span<const std::uint8_t> bytes, std::size_t group_size)
    : bytes_(bytes), group_size_(group_size)
{
    validate_macro_group_size(group_size);
    if (bytes.size() != macro_bytes(group_size)) {
        throw FormatError(FormatErrorKind::Corruption,
                          fmt::format("macro is {} bytes, expected {} for GS={}", bytes.size(),
                                      macro_bytes(group_size), group_size));
    }
}

Half MacroView::scale(std::size_t channel) const
{
    const std::size_t off = scale_offset() + 2 * channel;
    return Half{static_cast<std::uint16_t>(bytes_[off] | (bytes_[off + 1] << 8))};
}

bool MacroView::padding_clear() const
{
    const auto pad = bytes_.subspan(zero_offset() + 4, kStripBytes - 4);
    return std::all_of(pad.begin(), pad.end(), [](std::uint8_t b) { return b == 0; });
}

namespace {

void store_u32(std::span<std::uint8_t> out, std::size_t offset, std::uint32_t v)
{
    out[offset] = static_cast<std::uint8_t>(v);
    out[offset + 1] = static_cast<std::uint8_t>(v >> 8);
    out[offset + 2] = static_cast<std::uint8_t>(v >> 16);
    out[offset + 3] = static_cast<std::uint8_t>(v >> 24);
}

}  // namespace

void pack_macro_into(const MacroFields& f, std::span<std::uint8_t> out)
{
    const std::size_t gs = f.group_size;
    validate_macro_group_size(gs);
    if (f.codes.size() != gs * kMacroRows) {
        throw FormatError(FormatErrorKind::Layout,
                          fmt::format("macro needs {} codes, got {}", gs * kMacroRows, f.codes.size()));
    }
    if (out.size() != macro_bytes(gs)) {
        throw FormatError(FormatErrorKind::Layout, "macro output buffer has the wrong size");
    }
    for (std::uint8_t c : f.codes) {
        if (c > kInt4Max) {
            throw FormatError(FormatErrorKind::Layout, fmt::format("code {} is not a nibble", c));
        }
    }
    for (std::uint8_t z : f.zeros) {
        if (z > kInt4Max) {
            throw FormatError(FormatErrorKind::Layout, fmt::format("zero {} is not a nibble", z));
        }
    }

    for (std::size_t pos = 0; pos < gs; ++pos) {
        std::uint32_t word = 0;
        for (std::size_t j = 0; j < kMacroRows; ++j) {
            word |= static_cast<std::uint32_t>(f.codes[j * gs + pos]) << (4 * j);
        }
        store_u32(out, pos * 4, word);
    }
    const std::size_t scale_off = macro_qweight_strips(gs) * kStripBytes;
    for (std::size_t j = 0; j < kMacroRows; ++j) {
        out[scale_off + 2 * j] = static_cast<std::uint8_t>(f.scales[j].bits);
        out[scale_off + 2 * j + 1] = static_cast<std::uint8_t>(f.scales[j].bits >> 8);
    }
    const std::size_t zero_off = scale_off + kStripBytes;
    std::uint32_t zword = 0;
    for (std::size_t j = 0; j < kMacroRows; ++j) {
        zword |= static_cast<std::uint32_t>(f.zeros[j]) << (4 * j);
    }
    store_u32(out, zero_off, zword);
    std::fill(out.begin() + zero_off + 4, out.begin() + zero_off + kStripBytes, std::uint8_t{0});
}

AwqMacro pack_macro(const MacroFields& fields)
{
    validate_macro_group_size(fields.group_size);
    AwqMacro m;
    m.group_size = fields.group_size;
    m.bytes.resize(macro_bytes(fields.group_size));
    pack_macro_into(fields, m.bytes);
    return m;
}

MacroFields unpack_macro(const MacroView& m)
{
    if (!m.padding_clear()) {
        throw FormatError(FormatErrorKind::Corruption, "macro zero-strip padding bits are set");
    }
    const std::size_t gs = m.group_size();
    MacroFields f;
    f.group_size = gs;
    f.codes.resize(gs * kMacroRows);
    for (std::size_t pos = 0; pos < gs; ++pos) {
        const std::uint32_t word = m.qword(pos);
        for (std::size_t j = 0; j < kMacroRows; ++j) {
            f.codes[j * gs + pos] = static_cast<std::uint8_t>((word >> (4 * j)) & 0xfu);
        }
    }
    for (std::size_t j = 0; j < kMacroRows; ++j) {
        f.scales[j] = m.scale(j);
        f.zeros[j] = m.zero(j);
    }
    return f;
}

ChannelSchedule::ChannelSchedule(std::size_t row_blocks, std::size_t groups_per_row,
                                 std::size_t channel_count)
    : row_blocks_(row_blocks), groups_(groups_per_row), channels_(channel_count)
{
    if (channel_count == 0) {
        throw FormatError(FormatErrorKind::Layout, "channel count must be positive");
    }
}

std::size_t ChannelSchedule::blocks_on(std::size_t channel) const
{
    if (channel >= row_blocks_) {
        return 0;
    }
    return (row_blocks_ - channel + channels_ - 1) / channels_;
}

std::size_t ChannelSchedule::channel_begin(std::size_t channel) const
{
    std::size_t begin = 0;
    for (std::size_t c = 0; c < channel; ++c) {
        begin += blocks_on(c) * groups_;
    }
    return begin;
}

ChannelSchedule::Slot ChannelSchedule::locate(std::size_t row_block, std::size_t group) const
{
    return Slot{row_block % channels_, (row_block / channels_) * groups_ + group};
}

std::size_t ChannelSchedule::stream_index(std::size_t row_block, std::size_t group) const
{
    const Slot s = locate(row_block, group);
    return channel_begin(s.channel) + s.position;
}

MacroView PackedTensor::macro_at(std::size_t stream_index) const
{
    const std::size_t n = macro_bytes(group_size);
    return MacroView(std::span<const std::uint8_t>(stream).subspan(stream_index * n, n), group_size);
}

PackedTensor layout_tensor(const QuantizedTensor& t, std::size_t channel_count)
{
    validate_macro_group_size(t.group_size);
    if (t.out_channels % kMacroRows != 0) {
        throw FormatError(FormatErrorKind::Layout,
                          fmt::format("out_channels {} not divisible by 8", t.out_channels));
    }
    if (t.in_channels % t.group_size != 0 ||
        t.groups.size() != t.out_channels * t.groups_per_row()) {
        throw FormatError(FormatErrorKind::Layout, "quantized tensor group count is inconsistent");
    }

    PackedTensor p;
    p.out_channels = t.out_channels;
    p.in_channels = t.in_channels;
    p.group_size = t.group_size;
    p.schedule = ChannelSchedule(t.out_channels / kMacroRows, t.groups_per_row(), channel_count);
    const std::size_t mbytes = macro_bytes(t.group_size);
    p.stream.resize(p.schedule.macro_count() * mbytes);

    MacroFields f;
    f.group_size = t.group_size;
    f.codes.resize(t.group_size * kMacroRows);
    for (std::size_t r = 0; r < p.schedule.row_blocks(); ++r) {
        for (std::size_t g = 0; g < t.groups_per_row(); ++g) {
            for (std::size_t j = 0; j < kMacroRows; ++j) {
                const QuantGroup& q = t.group(r * kMacroRows + j, g);
                std::copy(q.codes.begin(), q.codes.end(), f.codes.begin() + j * t.group_size);
                f.scales[j] = q.scale;
                f.zeros[j] = q.zero;
            }
            const std::size_t idx = p.schedule.stream_index(r, g);
            pack_macro_into(f, std::span<std::uint8_t>(p.stream).subspan(idx * mbytes, mbytes));
        }
    }
    if (t.awq_channel_scale) {
        p.awq_channel_scale = *t.awq_channel_scale;
    }
    return p;
}

QuantizedTensor reassemble_tensor(const PackedTensor& p)
{
    QuantizedTensor t;
    t.out_channels = p.out_channels;
    t.in_channels = p.in_channels;
    t.group_size = p.group_size;
    t.groups.resize(p.out_channels * (p.in_channels / p.group_size));
    for (std::size_t r = 0; r < p.schedule.row_blocks(); ++r) {
        for (std::size_t g = 0; g < p.schedule.groups_per_row(); ++g) {
            const MacroFields f = unpack_macro(p.macro(r, g));
            for (std::size_t j = 0; j < kMacroRows; ++j) {
                QuantGroup& q = t.group(r * kMacroRows + j, g);
                q.codes.assign(f.codes.begin() + j * p.group_size,
                               f.codes.begin() + (j + 1) * p.group_size);
                q.scale = f.scales[j];
                q.zero = f.zeros[j];
            }
        }
    }
    if (p.has_awq_scale()) {
        t.awq_channel_scale = p.awq_channel_scale;
    }
    return t;
}

}  // namespace awq_edge
