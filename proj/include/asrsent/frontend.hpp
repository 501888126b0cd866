#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "asrsent/binary_io.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/features.hpp"

namespace asrsent {

struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 16000;
};

struct FrontendConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t mel_bins = 80;
  std::size_t fft_size = 512;
  double log_floor = 1e-6;
  double low_hz = 0.0;
  double high_hz = 0.0;  // 0 means Nyquist
  bool normalize = false;  // per-utterance mean/variance normalization

  std::size_t window_samples() const { return static_cast<std::size_t>(std::lround(sample_rate * window_ms / 1000.0)); }
  std::size_t hop_samples() const { return static_cast<std::size_t>(std::lround(sample_rate * hop_ms / 1000.0)); }

  void validate() const {
    if (sample_rate <= 0) throw ShapeError("frontend: sample_rate must be positive");
    if (!(hop_ms > 0.0 && window_ms > hop_ms)) throw ShapeError("frontend: require window_ms > hop_ms > 0");
    if (mel_bins < 1) throw ShapeError("frontend: mel_bins must be >= 1");
    if (fft_size < window_samples()) throw ShapeError("frontend: fft_size shorter than the window");
    if (!(log_floor > 0.0)) throw ShapeError("frontend: log_floor must be positive");
  }
};

// ---------------------------------------------------------------------------
// WAV I/O (RIFF, PCM16, mono)

inline AudioBuffer decode_wav(io::Reader& r) {
  if (r.bytes(4) != "RIFF") throw DataError("not a RIFF file: '" + r.origin() + "'");
  r.u32();
  if (r.bytes(4) != "WAVE") throw DataError("not a WAVE file: '" + r.origin() + "'");
  bool have_fmt = false;
  AudioBuffer out;
  while (true) {
    if (r.remaining() == 0) throw DataError("missing data chunk in '" + r.origin() + "'");
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw DataError("short fmt chunk");
      const auto format = r.u16();
      const auto channels = r.u16();
      const auto rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      const auto bits = r.u16();
      r.bytes(size - 16);
      if (format != 1 || bits != 16) throw DataError("unsupported WAV encoding: only PCM16 is accepted");
      if (channels != 1) throw DataError("unsupported channel count " + std::to_string(channels) + ": mono required");
      out.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("data chunk before fmt chunk");
      if (size % 2 != 0 || size > r.remaining()) throw DataError("truncated data chunk in '" + r.origin() + "'");
      out.samples.resize(size / 2);
      for (auto& s : out.samples) s = static_cast<float>(static_cast<std::int16_t>(r.u16())) / 32768.0f;
      return out;
    } else {
      r.bytes(size + (size & 1u));
    }
  }
}

inline AudioBuffer load_wav(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  return decode_wav(r);
}

inline void write_wav(const AudioBuffer& audio, const std::filesystem::path& path) {
  io::Writer w;
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(audio.sample_rate));
  w.u32(static_cast<std::uint32_t>(audio.sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (float s : audio.samples) {
    const long q = std::lround(std::clamp(s, -1.0f, 1.0f) * 32768.0f);
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  w.save(path);
}

// ---------------------------------------------------------------------------
// Log-mel features

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-scale filters over the non-negative FFT bins (mel_bins x (fft/2+1)).
inline std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double high = cfg.high_hz > 0.0 ? cfg.high_hz : cfg.sample_rate / 2.0;
  const double mel_lo = hz_to_mel(cfg.low_hz), mel_hi = hz_to_mel(high);
  std::vector<double> edges(cfg.mel_bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(cfg.mel_bins + 1));
  }
  std::vector<std::vector<double>> bank(cfg.mel_bins, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t j = 0; j < bins; ++j) {
      const double f = static_cast<double>(j) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      bank[m][j] = std::max(0.0, std::min(up, down));
    }
  }
  return bank;
}

inline std::size_t frame_count(std::size_t num_samples, std::size_t window, std::size_t hop) {
  if (num_samples < window) return 0;
  return 1 + (num_samples - window) / hop;
}

/// Hann-windowed power spectrum -> mel energies -> log(energy + floor).
inline FeatureSequence log_mel(const AudioBuffer& audio, const FrontendConfig& cfg = {}) {
  cfg.validate();
  if (audio.sample_rate != cfg.sample_rate) {
    throw ShapeError("log_mel: audio sample rate " + std::to_string(audio.sample_rate) + " != configured " +
                     std::to_string(cfg.sample_rate) + " (resampling is not supported)");
  }
  const std::size_t win = cfg.window_samples(), hop = cfg.hop_samples();
  const std::size_t frames = frame_count(audio.samples.size(), win, hop);
  if (frames == 0) throw ShapeError("log_mel: audio shorter than one analysis window");

  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(win - 1));
  }
  const auto bank = mel_filterbank(cfg);
  const std::size_t bins = cfg.fft_size / 2 + 1;

  Eigen::FFT<double> fft;
  std::vector<double> frame(cfg.fft_size, 0.0);
  std::vector<std::complex<double>> spectrum;
  std::vector<double> power(bins);
  Tensor<float> out({frames, cfg.mel_bins});
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t n = 0; n < win; ++n) frame[n] = audio.samples[t * hop + n] * window[n];
    fft.fwd(spectrum, frame);
    for (std::size_t j = 0; j < bins; ++j) power[j] = std::norm(spectrum[j]);
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      double e = 0.0;
      for (std::size_t j = 0; j < bins; ++j) e += bank[m][j] * power[j];
      out.at(t, m) = static_cast<float>(std::log(e + cfg.log_floor));
    }
  }
  if (cfg.normalize) {
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < frames; ++t) mean += out.at(t, m);
      mean /= static_cast<double>(frames);
      for (std::size_t t = 0; t < frames; ++t) sq += (out.at(t, m) - mean) * (out.at(t, m) - mean);
      const double sd = std::sqrt(sq / static_cast<double>(frames));
      for (std::size_t t = 0; t < frames; ++t) {
        out.at(t, m) = static_cast<float>(sd > 0.0 ? (out.at(t, m) - mean) / sd : 0.0);
      }
    }
  }
  return FeatureSequence(std::move(out), static_cast<double>(hop) / cfg.sample_rate);
}

}  // namespace asrsent
