#pragma once

// Little-endian scalar and array I/O for the on-disk formats.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace retrodiff::binio {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, std::span<const float> values);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
void read_f32(std::istream& is, std::span<float> out);

// Whole-file helpers for raw float grids.
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected_count);

}  // namespace retrodiff::binio
