#include "awq_edge/model_file.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

namespace awq_edge {

namespace {

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void half(Half h)
    {
        out_.push_back(static_cast<std::uint8_t>(h.bits));
        out_.push_back(static_cast<std::uint8_t>(h.bits >> 8));
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    void seek(std::size_t pos) { pos_ = pos; }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    Half half()
    {
        need(2);
        const auto lo = in_[pos_++];
        const auto hi = in_[pos_++];
        return Half{static_cast<std::uint16_t>(lo | (hi << 8))};
    }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > in_.size()) {
            throw FormatError(FormatErrorKind::Truncated,
                              fmt::format("weights file truncated at byte {}", in_.size()));
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::size_t shape_elements(const std::vector<std::size_t>& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

}  // namespace

const StoredTensor& ModelFile::tensor(const std::string& name) const
{
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t;
        }
    }
    throw FormatError(FormatErrorKind::DirectoryInconsistent,
                      fmt::format("tensor '{}' missing from model", name));
}

std::uint64_t name_hash(std::string_view name)
{
    // FNV-1a, 64-bit
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::size_t tensor_payload_bytes(const TensorSpec& ts, std::size_t group_size, bool awq_scale)
{
    if (!ts.quantized) {
        return ts.elements() * 2;
    }
    const std::size_t macros = (ts.shape[0] / kMacroRows) * (ts.shape[1] / group_size);
    return macros * macro_bytes(group_size) + (awq_scale ? ts.shape[1] * 2 : 0);
}

std::size_t packed_size(std::span<const TensorSpec> manifest, std::size_t group_size, bool awq_scales)
{
    std::size_t total = kHeaderBytes + manifest.size() * kDirectoryEntryBytes;
    for (const auto& t : manifest) {
        total += tensor_payload_bytes(t, group_size, awq_scales);
    }
    return total;
}

std::size_t packed_size(const ModelConfig& config)
{
    const auto manifest = tensor_manifest(config);
    return packed_size(manifest, config.group_size, config.awq_channel_scales);
}

std::vector<std::uint8_t> serialize_weights(const ModelFile& model)
{
    const auto& tensors = model.tensors;
    std::vector<std::uint8_t> out;
    ByteWriter w(out);
    out.insert(out.end(), std::begin(kFileMagic), std::end(kFileMagic));
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));

    std::uint64_t offset = kHeaderBytes + tensors.size() * kDirectoryEntryBytes;
    std::vector<std::uint64_t> lengths;
    for (const auto& t : tensors) {
        std::uint64_t len = 0;
        if (t.quantized()) {
            const auto& p = t.packed();
            len = p.stream.size() + p.awq_channel_scale.size() * 2;
        } else {
            len = t.half().size() * 2;
        }
        lengths.push_back(len);

        w.u64(name_hash(t.name));
        w.u32(static_cast<std::uint32_t>(t.quantized() ? DType::AwqMacroQ4 : DType::F16));
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        w.u32(static_cast<std::uint32_t>(t.shape.size() > 0 ? t.shape[0] : 0));
        w.u32(static_cast<std::uint32_t>(t.shape.size() > 1 ? t.shape[1] : 0));
        w.u32(static_cast<std::uint32_t>(t.quantized() ? t.packed().group_size : 0));
        w.u32(static_cast<std::uint32_t>(t.quantized() ? t.packed().schedule.channel_count() : 0));
        w.u32(t.quantized() && t.packed().has_awq_scale() ? kFlagAwqScale : 0u);
        w.u32(0);
        w.u64(offset);
        w.u64(len);
        offset += len;
    }
    for (const auto& t : tensors) {
        if (t.quantized()) {
            const auto& p = t.packed();
            w.bytes(p.stream);
            for (float s : p.awq_channel_scale) {
                w.half(to_half(s));
            }
        } else {
            for (Half h : t.half()) {
                w.half(h);
            }
        }
    }
    return out;
}

std::vector<DirectoryEntry> parse_directory(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < sizeof(kFileMagic)) {
        throw FormatError(FormatErrorKind::Truncated, "weights file shorter than its magic");
    }
    if (std::memcmp(bytes.data(), kFileMagic, sizeof(kFileMagic)) != 0) {
        throw FormatError(FormatErrorKind::BadMagic, "not an AWQ_MACRO weights file (bad magic)");
    }
    ByteReader r(bytes);
    r.seek(sizeof(kFileMagic));
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw FormatError(FormatErrorKind::VersionMismatch,
                          fmt::format("format version {} unsupported (expected {})", version,
                                      kFormatVersion));
    }
    const std::uint32_t count = r.u32();
    if (kHeaderBytes + static_cast<std::uint64_t>(count) * kDirectoryEntryBytes > bytes.size()) {
        throw FormatError(FormatErrorKind::Truncated,
                          fmt::format("directory of {} entries exceeds file size {}", count,
                                      bytes.size()));
    }

    std::vector<DirectoryEntry> dir(count);
    std::uint64_t expected_offset = kHeaderBytes + static_cast<std::uint64_t>(count) * kDirectoryEntryBytes;
    for (auto& e : dir) {
        e.name_hash = r.u64();
        const std::uint32_t dtype = r.u32();
        const std::uint32_t ndim = r.u32();
        const std::uint32_t d0 = r.u32();
        const std::uint32_t d1 = r.u32();
        e.group_size = r.u32();
        e.channels = r.u32();
        e.flags = r.u32();
        r.u32();
        e.offset = r.u64();
        e.length = r.u64();
        if (dtype != static_cast<std::uint32_t>(DType::F16) &&
            dtype != static_cast<std::uint32_t>(DType::AwqMacroQ4)) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("unknown dtype tag {}", dtype));
        }
        e.dtype = static_cast<DType>(dtype);
        if (ndim == 0 || ndim > 2) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("unsupported tensor rank {}", ndim));
        }
        e.shape = ndim == 1 ? std::vector<std::size_t>{d0} : std::vector<std::size_t>{d0, d1};
        if (e.offset != expected_offset) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("section offset {} where {} was expected", e.offset,
                                          expected_offset));
        }
        if (e.offset + e.length > bytes.size()) {
            throw FormatError(FormatErrorKind::Truncated,
                              fmt::format("section [{}, {}) runs past end of file ({} bytes)",
                                          e.offset, e.offset + e.length, bytes.size()));
        }
        expected_offset += e.length;
    }
    if (expected_offset != bytes.size()) {
        throw FormatError(FormatErrorKind::DirectoryInconsistent,
                          fmt::format("{} trailing bytes after last section",
                                      bytes.size() - expected_offset));
    }
    return dir;
}

ModelFile parse_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config)
{
    const auto dir = parse_directory(bytes);
    const auto manifest = tensor_manifest(config);

    std::map<std::uint64_t, const DirectoryEntry*> by_hash;
    for (const auto& e : dir) {
        if (!by_hash.emplace(e.name_hash, &e).second) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent, "duplicate tensor hash");
        }
    }
    if (dir.size() != manifest.size()) {
        throw FormatError(FormatErrorKind::DirectoryInconsistent,
                          fmt::format("directory has {} tensors, architecture expects {}",
                                      dir.size(), manifest.size()));
    }

    ModelFile model;
    model.config = config;
    for (const auto& ts : manifest) {
        const auto it = by_hash.find(name_hash(ts.name));
        if (it == by_hash.end()) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("tensor '{}' missing from directory", ts.name));
        }
        const DirectoryEntry& e = *it->second;
        if (e.shape != ts.shape) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("tensor '{}' shape disagrees with architecture", ts.name));
        }
        const bool quantized = e.dtype == DType::AwqMacroQ4;
        if (quantized != ts.quantized) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("tensor '{}' dtype disagrees with quantized_tensors",
                                          ts.name));
        }
        const bool awq = (e.flags & kFlagAwqScale) != 0;
        const std::size_t expect_len =
            quantized ? tensor_payload_bytes(ts, e.group_size, awq) : ts.elements() * 2;
        if (quantized && (e.group_size != config.group_size || e.group_size % 8 != 0 ||
                          e.channels == 0 || ts.shape[1] % e.group_size != 0)) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("tensor '{}' has invalid group size / channel count",
                                          ts.name));
        }
        if (e.length != expect_len) {
            throw FormatError(FormatErrorKind::DirectoryInconsistent,
                              fmt::format("tensor '{}' section is {} bytes, expected {}", ts.name,
                                          e.length, expect_len));
        }

        StoredTensor t;
        t.name = ts.name;
        t.shape = ts.shape;
        const auto section = bytes.subspan(e.offset, e.length);
        if (quantized) {
            PackedTensor p;
            p.out_channels = ts.shape[0];
            p.in_channels = ts.shape[1];
            p.group_size = e.group_size;
            p.schedule = ChannelSchedule(p.out_channels / kMacroRows, p.in_channels / p.group_size,
                                         e.channels);
            const std::size_t stream_len = p.macro_count() * macro_bytes(p.group_size);
            p.stream.assign(section.begin(), section.begin() + stream_len);
            for (std::size_t i = 0; i < p.macro_count(); ++i) {
                if (!p.macro_at(i).padding_clear()) {
                    throw FormatError(FormatErrorKind::Corruption,
                                      fmt::format("tensor '{}' macro {} has nonzero padding",
                                                  ts.name, i));
                }
            }
            if (awq) {
                ByteReader r(section);
                r.seek(stream_len);
                p.awq_channel_scale.resize(p.in_channels);
                for (auto& s : p.awq_channel_scale) {
                    s = to_float(r.half());
                }
            }
            t.data = std::move(p);
        } else {
            ByteReader r(section);
            std::vector<Half> h(shape_elements(ts.shape));
            for (auto& v : h) {
                v = r.half();
            }
            t.data = std::move(h);
        }
        model.tensors.push_back(std::move(t));
    }
    return model;
}

ModelPaths model_paths(const std::filesystem::path& base)
{
    auto weights = base;
    weights += ".bin";
    auto arch = base;
    arch += ".json";
    return {weights, arch};
}

void write_model(const ModelFile& model, const std::filesystem::path& base)
{
    const auto paths = model_paths(base);
    const auto bytes = serialize_weights(model);
    const std::string arch = config_to_json(model.config).dump(2) + "\n";

    // write both files under temporary names first so a failure leaves no partial pair
    auto tmp_weights = paths.weights;
    tmp_weights += ".tmp";
    auto tmp_arch = paths.arch;
    tmp_arch += ".tmp";
    auto write_file = [](const std::filesystem::path& p, const char* data, std::size_t n) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(data, static_cast<std::streamsize>(n));
        if (!out) {
            throw FormatError(FormatErrorKind::Io, fmt::format("cannot write '{}'", p.string()));
        }
    };
    try {
        write_file(tmp_weights, reinterpret_cast<const char*>(bytes.data()), bytes.size());
        write_file(tmp_arch, arch.data(), arch.size());
        std::filesystem::rename(tmp_weights, paths.weights);
        std::filesystem::rename(tmp_arch, paths.arch);
    } catch (const std::filesystem::filesystem_error& e) {
        std::error_code ec;
        std::filesystem::remove(tmp_weights, ec);
        std::filesystem::remove(tmp_arch, ec);
        throw FormatError(FormatErrorKind::Io, e.what());
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp_weights, ec);
        std::filesystem::remove(tmp_arch, ec);
        throw;
    }
}

ModelFile read_model(const std::filesystem::path& base)
{
    const auto paths = model_paths(base);
    const ModelConfig config = load_config(paths.arch);
    std::ifstream in(paths.weights, std::ios::binary);
    if (!in) {
        throw FormatError(FormatErrorKind::Io,
                          fmt::format("cannot open weights '{}'", paths.weights.string()));
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_weights(bytes, config);
}

}  // namespace awq_edge
