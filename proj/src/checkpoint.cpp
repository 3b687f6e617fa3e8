#include "selfdistill/checkpoint.hpp"

#include <array>
#include <bit>
#include <type_traits>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"

namespace selfdistill {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'D', 'C', 'K'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw IoError(fmt::format("checkpoint truncated while reading {}", what));
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet& params) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.block_count()));
  for (const auto& block : params.blocks()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(block.name.size()));
    out.write(block.name.data(), static_cast<std::streamsize>(block.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(block.shape.size()));
    for (std::size_t d : block.shape) put<std::uint64_t>(out, d);
    for (double v : block.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("checkpoint write failed");
}

ParameterSet read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("not a checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw IoError(fmt::format("unsupported checkpoint version {}", version));
  const auto count = get<std::uint32_t>(in, "block count");

  ParameterSet params;
  for (std::uint32_t b = 0; b < count; ++b) {
    ParamBlock block;
    const auto name_len = get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw IoError(fmt::format("checkpoint block {}: name too long", b));
    block.name.resize(name_len);
    if (!in.read(block.name.data(), name_len)) throw IoError("checkpoint truncated while reading a block name");
    if (params.contains(block.name)) throw IoError(fmt::format("checkpoint block '{}' repeated", block.name));
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) throw IoError(fmt::format("checkpoint block '{}': rank {} too large", block.name, rank));
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(in, "dimension");
      if (d != 0 && elements > kMaxElements / d) throw IoError(fmt::format("checkpoint block '{}' too large", block.name));
      elements *= d;
      block.shape.push_back(static_cast<std::size_t>(d));
    }
    block.values.resize(static_cast<std::size_t>(elements));
    for (double& v : block.values) v = std::bit_cast<double>(get<std::uint64_t>(in, "values"));
    params.add(std::move(block));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint");
  return params;
}

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  write_checkpoint(out, params);
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path));
  return read_checkpoint(in);
}

}  // namespace selfdistill
