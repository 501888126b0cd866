#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "asrsent/errors.hpp"
#include "asrsent/example.hpp"
#include "asrsent/features.hpp"

namespace asrsent {

/// SpecAugment parameters. Defaults are the LibriSpeech basic (LB) row.
/// Time widths (warp_W, time_T) are expressed in frames of
/// `reference_frame_period`; apply_policy rescales them to the sequence's own
/// frame period. The free functions below take raw frame counts.
struct SpecAugmentPolicy {
  std::size_t warp_W = 80;
  std::size_t freq_F = 27;
  std::size_t freq_mF = 1;
  std::size_t time_T = 100;
  double time_p = 1.0;
  std::size_t time_mT = 1;
  float mask_value = 0.0f;
  bool enabled = true;
  double reference_frame_period = 0.01;

  void validate() const {
    if (!(time_p >= 0.0 && time_p <= 1.0)) throw ShapeError("augment: time_p must lie in [0, 1]");
    if (!(reference_frame_period > 0.0)) throw ShapeError("augment: reference_frame_period must be positive");
  }

  static SpecAugmentPolicy disabled() {
    SpecAugmentPolicy p;
    p.enabled = false;
    return p;
  }
};

using AugmentRng = std::mt19937_64;

namespace detail {

inline std::size_t uniform_index(AugmentRng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace detail

inline FeatureSequence freq_mask(const FeatureSequence& seq, std::size_t F, std::size_t mF, AugmentRng& rng,
                                 float mask_value = 0.0f) {
  const std::size_t D = seq.dim();
  if (F > D) throw ShapeError("freq_mask: F=" + std::to_string(F) + " exceeds feature dim " + std::to_string(D));
  FeatureSequence out = seq;
  for (std::size_t m = 0; m < mF; ++m) {
    const std::size_t f = detail::uniform_index(rng, 0, F);
    const std::size_t f0 = detail::uniform_index(rng, 0, D - f);
    for (std::size_t t = 0; t < out.frames(); ++t) {
      for (std::size_t d = f0; d < f0 + f; ++d) out.at(t, d) = mask_value;
    }
  }
  return out;
}

inline std::size_t time_mask_cap(std::size_t frames, std::size_t T_max, double p) {
  return std::min(T_max, static_cast<std::size_t>(std::floor(p * static_cast<double>(frames))));
}

inline FeatureSequence time_mask(const FeatureSequence& seq, std::size_t T_max, std::size_t mT, double p,
                                 AugmentRng& rng, float mask_value = 0.0f) {
  const std::size_t T = seq.frames();
  const std::size_t cap = time_mask_cap(T, T_max, p);
  FeatureSequence out = seq;
  for (std::size_t m = 0; m < mT; ++m) {
    const std::size_t w = detail::uniform_index(rng, 0, cap);
    const std::size_t t0 = detail::uniform_index(rng, 0, T - w);
    for (std::size_t t = t0; t < t0 + w; ++t) {
      for (std::size_t d = 0; d < out.dim(); ++d) out.at(t, d) = mask_value;
    }
  }
  return out;
}

/// Piecewise-linear resampling of the time axis that moves frame `anchor` to
/// `anchor + shift` and keeps both endpoints fixed.
inline FeatureSequence warp_time_axis(const FeatureSequence& seq, std::size_t anchor, long shift) {
  const std::size_t T = seq.frames();
  const double last = static_cast<double>(T - 1);
  const double src_anchor = static_cast<double>(anchor);
  const double dst_anchor = src_anchor + static_cast<double>(shift);
  FeatureSequence out = seq;
  for (std::size_t t = 0; t < T; ++t) {
    const double td = static_cast<double>(t);
    double src;
    if (td <= dst_anchor) {
      src = dst_anchor > 0.0 ? td * src_anchor / dst_anchor : 0.0;
    } else {
      src = src_anchor + (td - dst_anchor) * (last - src_anchor) / (last - dst_anchor);
    }
    src = std::clamp(src, 0.0, last);
    const auto i = static_cast<std::size_t>(std::floor(src));
    const double frac = src - static_cast<double>(i);
    for (std::size_t d = 0; d < seq.dim(); ++d) {
      const float v0 = seq.at(i, d);
      if (frac == 0.0 || i + 1 >= T) {
        out.at(t, d) = v0;
      } else {
        const float v1 = seq.at(i + 1, d);
        out.at(t, d) = static_cast<float>(v0 + frac * (static_cast<double>(v1) - v0));
      }
    }
  }
  return out;
}

inline FeatureSequence time_warp(const FeatureSequence& seq, std::size_t W, AugmentRng& rng) {
  const std::size_t T = seq.frames();
  if (W == 0 || T <= 2 * W) return seq;
  const std::size_t anchor = detail::uniform_index(rng, W, T - W - 1);
  const long shift = std::uniform_int_distribution<long>(-static_cast<long>(W), static_cast<long>(W))(rng);
  if (shift == 0) return seq;
  return warp_time_axis(seq, anchor, shift);
}

/// Warp, then frequency masks, then time masks. Label and metadata are untouched.
inline SentimentExample apply_policy(const SentimentExample& example, const SpecAugmentPolicy& policy,
                                     AugmentRng& rng) {
  policy.validate();
  if (!policy.enabled) return example;
  const double ratio = policy.reference_frame_period / example.features.frame_period;
  auto frames = [&](std::size_t ref) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(ref) * ratio + 1e-9));
  };
  SentimentExample out = example;
  out.features = time_warp(out.features, frames(policy.warp_W), rng);
  out.features = freq_mask(out.features, std::min(policy.freq_F, out.features.dim()), policy.freq_mF, rng,
                           policy.mask_value);
  out.features = time_mask(out.features, frames(policy.time_T), policy.time_mT, policy.time_p, rng,
                           policy.mask_value);
  return out;
}

}  // namespace asrsent
