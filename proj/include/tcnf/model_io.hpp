// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/flow.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>

namespace tcnf::io {

/// Layout: "TCNF", u32 version, u64 header length, JSON header, raw
/// little-endian doubles for every parameter in header order, u64 FNV-1a
/// checksum of everything before it.
inline constexpr std::uint32_t kModelFormatVersion = 1;

nlohmann::json to_json(const flow::ModelConfig& cfg);
flow::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const data::NormStats& stats);
data::NormStats norm_stats_from_json(const nlohmann::json& j);

std::string serialize_model(const flow::FlowModel& model);
flow::FlowModel deserialize_model(const std::string& bytes);

void save_model(const flow::FlowModel& model, const std::filesystem::path& path);
/// Throws FormatError on a truncated, corrupt or version-mismatched file.
flow::FlowModel load_model(const std::filesystem::path& path);

}  // namespace tcnf::io
