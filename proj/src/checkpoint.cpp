#include "retrodiff/checkpoint.hpp"

#include <fstream>
#include <set>

#include "retrodiff/binary_io.hpp"
#include "retrodiff/error.hpp"

namespace retrodiff {

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params, std::uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::write_u64(os, kCheckpointVersion);
  binio::write_u64(os, config_hash);
  binio::write_u64(os, params.scalar_count());
  for (const auto& p : params) {
    binio::write_u32(os, std::uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    binio::write_u32(os, std::uint32_t(p.value.rank()));
    for (auto e : p.value.shape()) binio::write_u32(os, std::uint32_t(e));
    binio::write_f32(os, p.value.data());
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::uint64_t load_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint not found: " + path.string());
  const auto version = binio::read_u64(is);
  if (version != kCheckpointVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto hash = binio::read_u64(is);
  const auto expected = binio::read_u64(is);
  if (expected != params.scalar_count())
    throw IoError(path.string() + ": holds " + std::to_string(expected) + " scalars, model has " +
                  std::to_string(params.scalar_count()));
  std::set<std::string> seen;
  std::uint64_t loaded = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    std::string name(binio::read_u32(is), '\0');
    is.read(name.data(), std::streamsize(name.size()));
    Shape shape(binio::read_u32(is));
    for (auto& e : shape) e = binio::read_u32(is);
    auto& p = params.at(name);
    if (p.value.shape() != shape)
      throw IoError(path.string() + ": parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                    shape_str(p.value.shape()));
    binio::read_f32(is, p.value.data());
    seen.insert(name);
    loaded += p.value.numel();
  }
  if (loaded != expected || seen.size() != params.size())
    throw IoError(path.string() + ": checkpoint is incomplete");
  return hash;
}

}  // namespace retrodiff
