#pragma once

// Binary parameter checkpoints, see docs/formats.md:
//
//   "SDCK"  u32 version  u32 block_count
//   per block: u32 name_len, name bytes, u32 rank, u64 dims[rank],
//              f64 values[prod(dims)]
//
// All integers and doubles are little-endian.

#include <cstdint>
#include <iosfwd>
#include <string>

#include "selfdistill/parameters.hpp"

namespace selfdistill {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParameterSet& params);
// Throws IoError on a bad magic, unknown version, truncation or a block whose
// value count disagrees with its shape.
ParameterSet read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace selfdistill
