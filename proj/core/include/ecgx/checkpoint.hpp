#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ecgx/tensor.hpp"

namespace ecgx {

// Flat little-endian container:
//   "RNN1" | version u32 | count u32 |
//   count x ( name_len u16 | name utf8 | rank u8 | dims u32[rank] | f32[prod(dims)] )

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Dims of a shape with leading unit axes dropped (at least rank 1).
std::vector<std::uint32_t> compact_dims(const Shape& shape);

CheckpointEntry make_entry(std::string name, std::span<const double> values, const Shape& shape);

void write_checkpoint(std::ostream& out, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace ecgx
