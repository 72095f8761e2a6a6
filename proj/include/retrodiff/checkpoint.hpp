#pragma once

#include <cstdint>
#include <filesystem>

#include "retrodiff/optim.hpp"

namespace retrodiff {

inline constexpr std::uint64_t kCheckpointVersion = 1;

// Header: u64 version, u64 config hash, u64 scalar parameter count. Then per
// parameter: u32 name length, name bytes, u32 rank, u32 extents, f32 data.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params, std::uint64_t config_hash);

// Loads into an existing set; names and shapes must match exactly. Returns the stored config hash.
std::uint64_t load_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params);

}  // namespace retrodiff
