#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace knowcl::io {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with two-space indent and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// Little-endian packing, independent of host byte order.
void append_f32le(std::vector<std::uint8_t>& out, std::span<const float> values);
void append_i32le(std::vector<std::uint8_t>& out, std::span<const std::int32_t> values);
void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t value);
void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t value);

std::vector<float> decode_f32le(std::span<const std::uint8_t> bytes);
std::vector<std::int32_t> decode_i32le(std::span<const std::uint8_t> bytes);
std::uint32_t decode_u32le(std::span<const std::uint8_t> bytes);
std::uint64_t decode_u64le(std::span<const std::uint8_t> bytes);

/// Fetches a required key, throwing std::invalid_argument that names it.
const nlohmann::json& require(const nlohmann::json& obj, const std::string& key,
                              const std::string& context);

}  // namespace knowcl::io
