#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "asrsent/binary_io.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

/// Variable-length T x D feature matrix (log-mel frames or encoder output).
struct FeatureSequence {
  Tensor<float> values{Shape{0, 0}};
  double frame_period = 0.01;  // seconds per frame

  FeatureSequence() = default;
  FeatureSequence(Tensor<float> v, double period) : values(std::move(v)), frame_period(period) {
    if (values.rank() != 2) throw ShapeError("feature sequence must be a T x D matrix");
  }

  std::size_t frames() const { return values.dim(0); }
  std::size_t dim() const { return values.dim(1); }
  float at(std::size_t t, std::size_t d) const { return values.at(t, d); }
  float& at(std::size_t t, std::size_t d) { return values.at(t, d); }

  bool operator==(const FeatureSequence&) const = default;
};

// "ASRF" feature file: magic, u32 version, u32 T, u32 D, f64 frame_period,
// then T*D f32 values row-major, all little-endian.
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::vector<char> encode_features(const FeatureSequence& seq) {
  io::Writer w;
  w.bytes("ASRF");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(seq.frames()));
  w.u32(static_cast<std::uint32_t>(seq.dim()));
  w.f64(seq.frame_period);
  for (float v : seq.values.data()) w.f32(v);
  return w.buffer();
}

inline FeatureSequence decode_features(io::Reader& r) {
  if (r.bytes(4) != "ASRF") throw DataError("bad feature file magic in '" + r.origin() + "'");
  const auto version = r.u32();
  if (version != kFeatureVersion) throw DataError("unsupported feature file version " + std::to_string(version));
  const std::size_t frames = r.u32();
  const std::size_t dim = r.u32();
  const double period = r.f64();
  if (frames * dim > r.remaining() / 4) throw DataError("truncated payload in '" + r.origin() + "'");
  std::vector<float> data(frames * dim);
  for (auto& v : data) v = r.f32();
  if (r.remaining() != 0) throw DataError("trailing bytes in feature file '" + r.origin() + "'");
  return FeatureSequence(Tensor<float>({frames, dim}, std::move(data)), period);
}

inline void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
  io::Writer w;
  const auto bytes = encode_features(seq);
  w.bytes({bytes.data(), bytes.size()});
  w.save(path);
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  return decode_features(r);
}

}  // namespace asrsent
