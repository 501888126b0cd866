#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>

#include "asrsent/binary_io.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

// "SNTC" checkpoint: magic, u32 version, u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 extents, f32 values (row-major).
inline constexpr char kCheckpointMagic[4] = {'S', 'N', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const std::map<std::string, Tensor<float>>& entries) {
  io::Writer w;
  w.bytes({kCheckpointMagic, 4});
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ShapeError("checkpoint entry name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ShapeError("checkpoint tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.data()) w.f32(v);
  }
  return w.buffer();
}

inline std::map<std::string, Tensor<float>> decode_checkpoint(io::Reader& r) {
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw DataError("bad checkpoint magic in '" + r.origin() + "'");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.u16();
    std::string name = r.bytes(len);
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 4) throw DataError("truncated payload in '" + r.origin() + "'");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    if (!out.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data))).second) {
      throw DataError("duplicate checkpoint entry");
    }
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after checkpoint payload");
  return out;
}

inline void write_checkpoint(const std::map<std::string, Tensor<float>>& entries, const std::filesystem::path& path) {
  io::Writer w;
  const auto bytes = encode_checkpoint(entries);
  w.bytes({bytes.data(), bytes.size()});
  w.save(path);
}

inline std::map<std::string, Tensor<float>> read_checkpoint(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  return decode_checkpoint(r);
}

}  // namespace asrsent
