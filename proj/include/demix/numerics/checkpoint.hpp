#pragma once

#include "demix/numerics/parameters.hpp"

#include <filesystem>
#include <json.hpp>
#include <string>

namespace demix {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// On-disk layout (little-endian):
///   magic "DMXCKPT\0" | u32 format version | u64 header length | header JSON
///   u64 record count | records...
/// Each record: u32 name length | name | u32 rank | u64 dims[rank]
///              | u8 element bytes (4 = float32, 8 = float64) | raw array.
struct Checkpoint {
  nlohmann::json header;
  ParameterSet<float> parameters;
};

std::string serialize_checkpoint(const nlohmann::json& header, const ParameterSet<float>& params);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const ParameterSet<float>& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Writes bytes to `path` via a sibling temporary and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace demix
