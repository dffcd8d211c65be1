#include "ecgx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "ecgx/errors.hpp"

namespace ecgx {

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <class T>
T get_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint: unexpected end of file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

std::vector<std::uint32_t> compact_dims(const Shape& shape) {
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(shape.batch), static_cast<std::uint32_t>(shape.time),
                                  static_cast<std::uint32_t>(shape.channels)};
  while (dims.size() > 1 && dims.front() == 1) dims.erase(dims.begin());
  return dims;
}

CheckpointEntry make_entry(std::string name, std::span<const double> values, const Shape& shape) {
  CheckpointEntry e;
  e.name = std::move(name);
  e.dims = compact_dims(shape);
  e.values.assign(values.begin(), values.end());
  return e;
}

void write_checkpoint(std::ostream& out, std::span<const CheckpointEntry> entries) {
  out.write("RNN1", 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("checkpoint: name too long");
    if (e.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("checkpoint: rank too large");
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    if (n != e.values.size()) throw FormatError("checkpoint: '" + e.name + "' dims do not match value count");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_le<std::uint32_t>(out, d);
    for (float f : e.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw FormatError("checkpoint: write failed");
}

std::vector<CheckpointEntry> read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RNN1", 4) != 0) throw FormatError("checkpoint: bad magic (expected RNN1)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = get_le<std::uint16_t>(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    if (!in) throw FormatError("checkpoint: truncated name");
    const auto rank = get_le<std::uint8_t>(in);
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.dims.push_back(get_le<std::uint32_t>(in));
      n *= e.dims.back();
    }
    e.values.resize(n);
    for (auto& f : e.values) f = std::bit_cast<float>(get_le<std::uint32_t>(in));
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, entries);
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace ecgx
