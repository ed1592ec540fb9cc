#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dastm/tensor.hpp"

// "DT64" binary tensor format: the 4 magic bytes, four little-endian uint32
// dims (n, c, h, w), then n*c*h*w little-endian float64 values row-major.

namespace dastm::dt64 {

void write(std::ostream& out, const Tensor4& t);
Tensor4 read(std::istream& in);

void save(const std::filesystem::path& path, const Tensor4& t);
Tensor4 load(const std::filesystem::path& path);

/// Checkpoint: `<stem>.dt64` holds the DT64 records back to back and
/// `<stem>.index` lists one `name n c h w offset` line per tensor in order.
void save_checkpoint(const std::filesystem::path& stem, const ParamSet& params);
/// Loads values into an existing ParamSet (names and shapes must match).
void load_checkpoint(const std::filesystem::path& stem, ParamSet& params);

}  // namespace dastm::dt64
