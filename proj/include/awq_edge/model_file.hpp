#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "awq_edge/config.hpp"
#include "awq_edge/half.hpp"
#include "awq_edge/macro.hpp"

namespace awq_edge {

inline constexpr char kFileMagic[8] = {'A', 'W', 'Q', 'M', 'A', 'C', 'R', 'O'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::size_t kDirectoryEntryBytes = 56;

enum class DType : std::uint32_t {
    F16 = 1,
    AwqMacroQ4 = 2,
};

struct StoredTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::variant<std::vector<Half>, PackedTensor> data;

    bool quantized() const { return std::holds_alternative<PackedTensor>(data); }
    const std::vector<Half>& half() const { return std::get<std::vector<Half>>(data); }
    const PackedTensor& packed() const { return std::get<PackedTensor>(data); }

    friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

// In-memory form of the weights file + architecture JSON pair.
struct ModelFile {
    ModelConfig config;
    std::vector<StoredTensor> tensors;  // manifest order

    const StoredTensor& tensor(const std::string& name) const;

    friend bool operator==(const ModelFile&, const ModelFile&) = default;
};

struct DirectoryEntry {
    std::uint64_t name_hash = 0;
    DType dtype = DType::F16;
    std::vector<std::size_t> shape;
    std::uint32_t group_size = 0;
    std::uint32_t channels = 0;
    std::uint32_t flags = 0;  // bit 0: FP16 AWQ channel-scale section follows the macros
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

inline constexpr std::uint32_t kFlagAwqScale = 1u;

std::uint64_t name_hash(std::string_view name);

// Payload bytes of one tensor as written.
std::size_t tensor_payload_bytes(const TensorSpec& ts, std::size_t group_size, bool awq_scale);

// Closed-form size of the weights file for a list of tensors.
std::size_t packed_size(std::span<const TensorSpec> manifest, std::size_t group_size,
                        bool awq_scales);
std::size_t packed_size(const ModelConfig& config);

std::vector<std::uint8_t> serialize_weights(const ModelFile& model);
std::vector<DirectoryEntry> parse_directory(std::span<const std::uint8_t> bytes);
ModelFile parse_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config);

// base + ".bin" and base + ".json"
struct ModelPaths {
    std::filesystem::path weights;
    std::filesystem::path arch;
};
ModelPaths model_paths(const std::filesystem::path& base);

void write_model(const ModelFile& model, const std::filesystem::path& base);
ModelFile read_model(const std::filesystem::path& base);

}  // namespace awq_edge
