#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>

#include "json.hpp"

#include "geodist/baseline_vf.hpp"
#include "geodist/denoiser.hpp"
#include "geodist/geometry.hpp"

namespace geodist {

inline constexpr char kCheckpointMagic[8] = {'G', 'E', 'O', 'D', 'I', 'S', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic, u32 version, u32 length + JSON header, u32 segment count,
/// per segment {u32 name length, name, u64 offset, u64 length}, float32 blob,
/// u32 CRC-32 of every preceding byte. All integers little-endian.
struct Checkpoint {
  std::variant<DenoiserModel, VectorFieldModel> model;
  NormalizationTransform transform;
  /// Free-form provenance (tool version, config hash, epoch, ...).
  nlohmann::json info = nlohmann::json::object();

  bool is_denoiser() const { return std::holds_alternative<DenoiserModel>(model); }
  const DenoiserModel& denoiser() const;
  const VectorFieldModel& vector_field() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
std::string serialize_checkpoint(const Checkpoint& checkpoint);

/// Throws IoError when the file is unreadable and ParseError on any format,
/// CRC or segment-table violation.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

nlohmann::json to_json(const NormalizationTransform& transform);
NormalizationTransform transform_from_json(const nlohmann::json& j);

}  // namespace geodist
