#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "knowcl/backbone.hpp"

namespace knowcl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const BackboneConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Layout: "KNCL", u32 version, u64 header length, JSON header, then every
/// parameter (running statistics included) as raw f32le in header order.
void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace knowcl
