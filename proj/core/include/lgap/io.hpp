#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/layers.hpp"

namespace lgap::io {

namespace fs = std::filesystem;

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ull) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Checksums of the little-endian encoding, so values match across hosts.
std::uint64_t checksum_f32(std::span<const float> values);
std::uint64_t checksum_u32(std::span<const std::uint32_t> values);

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(const std::string& text);

void write_f32le(const fs::path& path, std::span<const float> values);
void write_u32le(const fs::path& path, std::span<const std::uint32_t> values);

/// Reads exactly `expected_count` values. A file of any other size is a
/// CorruptDataError.
std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count);
std::vector<std::uint32_t> read_u32le(const fs::path& path, std::size_t expected_count);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

nlohmann::json read_json(const fs::path& path);
/// Stable two-space indented dump with trailing newline.
void write_json(const fs::path& path, const nlohmann::json& value);

// ---------------------------------------------------------------------------
// Model checkpoints: manifest.json + params.f32le in one directory.

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    std::string kind;
    nlohmann::json architecture;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

void save_checkpoint(const fs::path& dir, const CheckpointInfo& info, const nn::ConstParameterRefs& params);

CheckpointInfo read_checkpoint_info(const fs::path& dir);

/// Fills parameters from the blob after verifying names, shapes and checksum.
void load_checkpoint_parameters(const fs::path& dir, const nn::ParameterRefs& params);

}  // namespace lgap::io
