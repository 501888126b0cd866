#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asrsent/features.hpp"

namespace asrsent {

/// A word token aligned to frames [start, end) of its utterance.
struct AlignedWord {
  std::string token;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const AlignedWord&) const = default;
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t length() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct SentimentExample {
  FeatureSequence features;
  int label = 0;
  int speaker = 0;
  std::vector<AlignedWord> alignment;
  std::optional<Span> cue_span;

  bool operator==(const SentimentExample&) const = default;
};

/// splitmix64 finalizer; mixes a base seed with stream coordinates.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

}  // namespace asrsent
