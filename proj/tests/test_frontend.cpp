#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "asrsent/frontend.hpp"

using namespace asrsent;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("asrsent_frontend_" + name);
}

// Builds a PCM16 RIFF file by hand so the reader is tested against raw bytes.
std::vector<char> wav_bytes(const std::vector<std::int16_t>& pcm, std::uint16_t channels, std::uint16_t bits = 16) {
  io::Writer w;
  const auto data = static_cast<std::uint32_t>(pcm.size() * 2);
  w.bytes("RIFF");
  w.u32(36 + data);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(channels);
  w.u32(16000);
  w.u32(16000u * channels * 2);
  w.u16(static_cast<std::uint16_t>(channels * 2));
  w.u16(bits);
  w.bytes("data");
  w.u32(data);
  for (auto s : pcm) w.u16(static_cast<std::uint16_t>(s));
  return w.buffer();
}

AudioBuffer decode(const std::vector<char>& bytes) {
  io::Reader r(bytes, "memory");
  return decode_wav(r);
}

AudioBuffer noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-0.5f, 0.5f);
  AudioBuffer a;
  a.samples.resize(n);
  for (auto& s : a.samples) s = d(rng);
  return a;
}

}  // namespace

TEST(Wav, ZeroPcmGivesZeroBuffer) {
  const auto a = decode(wav_bytes(std::vector<std::int16_t>(100, 0), 1));
  ASSERT_EQ(a.samples.size(), 100u);
  for (float s : a.samples) EXPECT_EQ(s, 0.0f);
  EXPECT_EQ(a.sample_rate, 16000);
}

TEST(Wav, HalfScaleSample) {
  const auto a = decode(wav_bytes({16384, -32768}, 1));
  EXPECT_EQ(a.samples[0], 0.5f);
  EXPECT_EQ(a.samples[1], -1.0f);
}

TEST(Wav, StereoIsRejected) {
  try {
    decode(wav_bytes({1, 2, 3, 4}, 2));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(Wav, UnsupportedBitDepthAndTruncation) {
  EXPECT_THROW(decode(wav_bytes({1, 2}, 1, 8)), DataError);
  auto bytes = wav_bytes({1, 2, 3, 4}, 1);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode(bytes), DataError);
  EXPECT_THROW(decode(std::vector<char>{'R', 'I', 'F', 'F'}), DataError);
}

TEST(Wav, FileRoundTrip) {
  AudioBuffer a{{0.0f, 0.5f, -0.25f, -1.0f}, 16000};
  const auto path = temp_path("rt.wav");
  write_wav(a, path);
  const auto b = load_wav(path);
  EXPECT_EQ(a.samples, b.samples);
  std::filesystem::remove(path);
}

TEST(LogMel, OneSecondGives98Frames) {
  const auto f = log_mel(noise(16000, 1));
  EXPECT_EQ(f.frames(), 98u);
  EXPECT_EQ(f.dim(), 80u);
  EXPECT_DOUBLE_EQ(f.frame_period, 0.01);
}

TEST(LogMel, ExactlyOneWindow) {
  EXPECT_EQ(log_mel(noise(400, 2)).frames(), 1u);
  EXPECT_THROW(log_mel(noise(399, 2)), ShapeError);
}

TEST(LogMel, SilenceIsLogFloor) {
  AudioBuffer a{std::vector<float>(16000, 0.0f), 16000};
  const auto f = log_mel(a);
  const float expected = static_cast<float>(std::log(1e-6));
  for (float v : f.values.data()) EXPECT_EQ(v, expected);
}

TEST(LogMel, ShortTailNeverAddsFrame) {
  for (std::size_t n : {400u, 1000u, 16000u}) {
    const auto base = frame_count(n, 400, 160);
    for (std::size_t extra = 0; extra < 160; ++extra) {
      if ((n - 400) % 160 + extra >= 160) break;
      EXPECT_EQ(frame_count(n + extra, 400, 160), base);
    }
    EXPECT_EQ(log_mel(noise(n + (159 - (n - 400) % 160), 3)).frames(), base);
  }
}

TEST(LogMel, FiniteAndDeterministic) {
  const auto a = noise(8000, 4);
  const auto f1 = log_mel(a);
  const auto f2 = log_mel(a);
  EXPECT_TRUE(f1.values.all_finite());
  EXPECT_EQ(f1, f2);
}

TEST(LogMel, ToneEnergyLandsInMatchingBand) {
  FrontendConfig cfg;
  AudioBuffer a{std::vector<float>(16000), 16000};
  for (std::size_t n = 0; n < a.samples.size(); ++n) {
    a.samples[n] = 0.5f * static_cast<float>(std::sin(2.0 * std::numbers::pi * 1000.0 * n / 16000.0));
  }
  const auto f = log_mel(a, cfg);
  const auto bank = mel_filterbank(cfg);
  std::size_t peak = 0;
  for (std::size_t m = 1; m < cfg.mel_bins; ++m) {
    if (f.at(50, m) > f.at(50, peak)) peak = m;
  }
  const std::size_t bin_1k = 1000 * cfg.fft_size / 16000;
  EXPECT_GT(bank[peak][bin_1k], 0.0);
}

TEST(LogMel, RejectsBadConfigAndRate) {
  FrontendConfig cfg;
  cfg.hop_ms = 30.0;
  EXPECT_THROW(log_mel(noise(16000, 5), cfg), ShapeError);
  AudioBuffer a = noise(16000, 5);
  a.sample_rate = 8000;
  EXPECT_THROW(log_mel(a), ShapeError);
}

TEST(LogMel, NormalizationGivesZeroMeanBins) {
  FrontendConfig cfg;
  cfg.normalize = true;
  const auto f = log_mel(noise(16000, 6), cfg);
  for (std::size_t m = 0; m < f.dim(); ++m) {
    double mean = 0.0;
    for (std::size_t t = 0; t < f.frames(); ++t) mean += f.at(t, m);
    EXPECT_NEAR(mean / f.frames(), 0.0, 1e-5);
  }
}
