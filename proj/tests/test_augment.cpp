#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "asrsent/augment.hpp"

using namespace asrsent;

namespace {

FeatureSequence random_seq(std::size_t frames, std::size_t dim, std::mt19937_64& rng, double period = 0.01) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor<float> v({frames, dim});
  for (auto& x : v.data()) x = n(rng) + 3.0f;  // keep values away from the mask value
  return FeatureSequence(std::move(v), period);
}

bool bytes_equal(const FeatureSequence& a, const FeatureSequence& b) {
  return a.values.shape() == b.values.shape() && a.frame_period == b.frame_period &&
         std::memcmp(a.values.data().data(), b.values.data().data(), a.values.size() * sizeof(float)) == 0;
}

SentimentExample example(std::mt19937_64& rng, std::size_t frames, std::size_t dim) {
  SentimentExample ex;
  ex.features = random_seq(frames, dim, rng);
  ex.label = 2;
  ex.speaker = 4;
  ex.alignment = {{"w0", 0, frames / 2}, {"w1", frames / 2, frames}};
  ex.cue_span = Span{1, 3};
  return ex;
}

}  // namespace

TEST(FreqMask, ZeroWidthIsIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_seq(20, 16, rng);
  EXPECT_TRUE(bytes_equal(freq_mask(x, 0, 3, rng), x));
}

TEST(FreqMask, FullWidthMasksEverything) {
  std::mt19937_64 rng(2);
  const auto x = random_seq(10, 8, rng);
  // With F = D the only start for a width-D mask is 0; retry until that width is drawn.
  for (int tries = 0; tries < 200; ++tries) {
    const auto y = freq_mask(x, 8, 1, rng, -1.0f);
    std::size_t masked = 0;
    for (float v : y.values.data()) masked += v == -1.0f;
    if (masked == y.values.size()) return;
  }
  FAIL() << "full-width mask never drawn";
}

TEST(FreqMask, RejectsWidthAboveDim) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(freq_mask(random_seq(4, 4, rng), 5, 1, rng), ShapeError);
}

TEST(FreqMask, AlteredBinsBoundedAndReproducible) {
  std::mt19937_64 data_rng(4);
  const auto x = random_seq(30, 40, data_rng);
  std::mt19937_64 a(99), b(99);
  const auto ya = freq_mask(x, 7, 2, a);
  EXPECT_TRUE(bytes_equal(ya, freq_mask(x, 7, 2, b)));
  std::size_t bins = 0;
  for (std::size_t d = 0; d < x.dim(); ++d) bins += ya.at(0, d) != x.at(0, d);
  EXPECT_LE(bins, 14u);
}

TEST(TimeMask, ZeroWidthOrZeroFraction) {
  std::mt19937_64 rng(5);
  const auto x = random_seq(50, 8, rng);
  EXPECT_TRUE(bytes_equal(time_mask(x, 0, 3, 1.0, rng), x));
  EXPECT_TRUE(bytes_equal(time_mask(x, 40, 3, 0.0, rng), x));
}

TEST(TimeWarp, IdentityCases) {
  std::mt19937_64 rng(6);
  const auto x = random_seq(40, 5, rng);
  EXPECT_TRUE(bytes_equal(time_warp(x, 0, rng), x));
  EXPECT_TRUE(bytes_equal(warp_time_axis(x, 17, 0), x));
  EXPECT_TRUE(bytes_equal(time_warp(x, 20, rng), x));  // T <= 2W
}

TEST(TimeWarp, ConstantSequenceUnchanged) {
  const FeatureSequence c(Tensor<float>({60, 4}, 1.7f), 0.01);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(bytes_equal(time_warp(c, 10, rng), c));
}

TEST(TimeWarp, EndpointsFixedAndAnchorMoves) {
  Tensor<float> ramp({21, 1});
  for (std::size_t t = 0; t < 21; ++t) ramp[t] = static_cast<float>(t);
  const FeatureSequence x(ramp, 0.01);
  const auto y = warp_time_axis(x, 10, 4);
  EXPECT_EQ(y.at(0, 0), 0.0f);
  EXPECT_EQ(y.at(20, 0), 20.0f);
  EXPECT_EQ(y.at(14, 0), 10.0f);  // source frame 10 now sits at 14
  for (std::size_t t = 1; t < 21; ++t) EXPECT_GE(y.at(t, 0), y.at(t - 1, 0));
}

TEST(Policy, DisabledLeavesExampleUnchanged) {
  std::mt19937_64 rng(8);
  const auto ex = example(rng, 40, 30);
  EXPECT_EQ(apply_policy(ex, SpecAugmentPolicy::disabled(), rng), ex);
}

TEST(Policy, LbDefaultsPreserveShape) {
  std::mt19937_64 rng(9);
  const auto ex = example(rng, 98, 80);
  const SpecAugmentPolicy lb;
  EXPECT_EQ(lb.warp_W, 80u);
  EXPECT_EQ(lb.freq_F, 27u);
  EXPECT_EQ(lb.time_T, 100u);
  const auto out = apply_policy(ex, lb, rng);
  EXPECT_EQ(out.features.values.shape(), (Shape{98, 80}));
  EXPECT_EQ(out.label, ex.label);
}

TEST(Policy, TimeWidthsFollowFramePeriod) {
  // 80 ms frames: 100 reference frames of 10 ms become 12 frames.
  SpecAugmentPolicy p;
  p.warp_W = 0;
  p.freq_F = 0;
  p.time_mT = 5;
  std::mt19937_64 rng(10);
  SentimentExample ex;
  ex.features = random_seq(200, 4, rng, 0.08);
  for (int i = 0; i < 100; ++i) {
    const auto out = apply_policy(ex, p, rng);
    std::size_t masked = 0;
    for (std::size_t t = 0; t < 200; ++t) masked += out.features.at(t, 0) == 0.0f;
    EXPECT_LE(masked, 5u * 12u);
  }
}

// Randomized contract sweep over policies and sequences.
TEST(Policy, RandomizedContracts) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 120)(gen);
    const std::size_t D = std::uniform_int_distribution<std::size_t>(1, 64)(gen);
    SentimentExample ex = example(gen, T, D);
    SpecAugmentPolicy p;
    p.warp_W = 0;
    p.freq_F = std::uniform_int_distribution<std::size_t>(0, D)(gen);
    p.freq_mF = std::uniform_int_distribution<std::size_t>(0, 3)(gen);
    p.time_T = std::uniform_int_distribution<std::size_t>(0, 150)(gen);
    p.time_p = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    p.time_mT = std::uniform_int_distribution<std::size_t>(0, 3)(gen);
    p.mask_value = -123.5f;
    const std::uint64_t seed = gen();

    std::mt19937_64 r1(seed), r2(seed);
    const auto a = apply_policy(ex, p, r1);
    const auto b = apply_policy(ex, p, r2);
    ASSERT_TRUE(bytes_equal(a.features, b.features));
    ASSERT_EQ(a.label, ex.label);
    ASSERT_EQ(a.speaker, ex.speaker);
    ASSERT_EQ(a.alignment, ex.alignment);
    ASSERT_EQ(a.cue_span, ex.cue_span);
    ASSERT_EQ(a.features.values.shape(), ex.features.values.shape());

    // Cells either equal the mask value exactly or are untouched input.
    std::size_t masked_frames = 0;
    for (std::size_t t = 0; t < T; ++t) {
      bool whole = true;
      for (std::size_t d = 0; d < D; ++d) {
        const float v = a.features.at(t, d);
        ASSERT_TRUE(v == p.mask_value || std::memcmp(&v, &ex.features.at(t, d), sizeof(float)) == 0);
        whole = whole && v == p.mask_value;
      }
      masked_frames += whole && p.freq_mF * p.freq_F < D;
    }
    EXPECT_LE(masked_frames, p.time_mT * time_mask_cap(T, p.time_T, p.time_p));

    SpecAugmentPolicy zero = p;
    zero.freq_F = 0;
    zero.time_T = 0;
    std::mt19937_64 r3(seed);
    ASSERT_TRUE(bytes_equal(apply_policy(ex, zero, r3).features, ex.features));
  }
}

TEST(Policy, WarpKeepsShapeAndLabels) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 120)(gen);
    const auto ex = example(gen, T, 6);
    SpecAugmentPolicy p;
    p.warp_W = std::uniform_int_distribution<std::size_t>(0, 40)(gen);
    const auto out = apply_policy(ex, p, gen);
    EXPECT_EQ(out.features.values.shape(), ex.features.values.shape());
    EXPECT_TRUE(out.features.values.all_finite());
    EXPECT_EQ(out.label, ex.label);
  }
}
