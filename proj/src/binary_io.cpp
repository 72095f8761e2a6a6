#include "retrodiff/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "retrodiff/error.hpp"

namespace retrodiff::binio {

namespace {

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out |= ((v >> (8 * i)) & 0xFF) << (8 * (sizeof(U) - 1 - i));
    return out;
  }
}

template <typename U>
void write_le(std::ostream& os, U v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
  if (!os) throw IoError("write failed");
}

template <typename U>
U read_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw IoError("unexpected end of file");
  return to_le(v);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }

void write_f32(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(float)));
    if (!os) throw IoError("write failed");
  } else {
    for (float f : values) write_le(os, std::bit_cast<std::uint32_t>(f));
  }
}

std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

void read_f32(std::istream& is, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()), std::streamsize(out.size() * sizeof(float)));
    if (!is) throw IoError("unexpected end of file");
  } else {
    for (auto& f : out) f = std::bit_cast<float>(read_le<std::uint32_t>(is));
  }
}

void write_f32_file(const std::filesystem::path& path, std::span<const float> values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_f32(os, values);
}

std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != expected_count * sizeof(float))
    throw IoError(path.string() + ": expected " + std::to_string(expected_count) + " floats, found " +
                  std::to_string(bytes) + " bytes");
  is.seekg(0);
  std::vector<float> out(expected_count);
  read_f32(is, out);
  return out;
}

}  // namespace retrodiff::binio
