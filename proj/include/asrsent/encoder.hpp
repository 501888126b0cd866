#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "asrsent/errors.hpp"
#include "asrsent/features.hpp"
#include "asrsent/optim.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

/// Shape of the frozen ASR encoder: `macro_repeats` x {1-D conv, max-pool},
/// then `bilstm_layers` bidirectional LSTM layers, each followed by a linear
/// projection. With `lstm_inside_macro` the LSTM stack is repeated inside
/// every macro layer instead.
struct EncoderConfig {
  std::size_t input_dim = 80;
  std::size_t conv_filters = 512;
  std::size_t conv_width = 5;
  std::size_t conv_stride = 1;
  std::size_t pool_width = 2;
  std::size_t pool_stride = 2;
  std::size_t macro_repeats = 3;
  std::size_t bilstm_layers = 3;
  std::size_t bilstm_units = 512;
  std::size_t projection_dim = 1536;
  bool lstm_inside_macro = false;

  std::size_t reduction() const {
    std::size_t r = 1;
    for (std::size_t i = 0; i < macro_repeats; ++i) r *= pool_stride * conv_stride;
    return r;
  }

  std::size_t output_dim() const { return bilstm_layers > 0 ? projection_dim : conv_filters; }

  void validate() const {
    if (input_dim == 0 || conv_filters == 0 || conv_width == 0 || conv_stride == 0) {
      throw ShapeError("encoder: conv sizes must be >= 1");
    }
    if (pool_width == 0 || pool_stride == 0) throw ShapeError("encoder: pool sizes must be >= 1");
    if (bilstm_layers > 0 && (bilstm_units == 0 || projection_dim == 0)) {
      throw ShapeError("encoder: LSTM sizes must be >= 1");
    }
  }
};

/// Output length of `same`-padded striding over `frames` (never drops a partial window).
inline std::size_t strided_length(std::size_t frames, std::size_t stride) { return (frames + stride - 1) / stride; }

inline std::size_t encoded_length(std::size_t frames, const EncoderConfig& cfg) {
  for (std::size_t i = 0; i < cfg.macro_repeats; ++i) {
    frames = strided_length(strided_length(frames, cfg.conv_stride), cfg.pool_stride);
  }
  return frames;
}

using EncoderParams = NamedTensors<float>;

namespace detail {

template <class Fn>
void for_each_encoder_layer(const EncoderConfig& cfg, Fn&& fn) {
  std::size_t in = cfg.input_dim;
  auto lstm_stack = [&](const std::string& prefix) {
    for (std::size_t l = 0; l < cfg.bilstm_layers; ++l) {
      fn(prefix + "lstm" + std::to_string(l), in, false);
      in = cfg.projection_dim;
    }
  };
  for (std::size_t m = 0; m < cfg.macro_repeats; ++m) {
    fn("conv" + std::to_string(m), in, true);
    in = cfg.conv_filters;
    if (cfg.lstm_inside_macro) lstm_stack("macro" + std::to_string(m) + ".");
  }
  if (!cfg.lstm_inside_macro) lstm_stack("");
}

inline Eigen::MatrixXf lstm_direction(const Eigen::MatrixXf& x, const float* w_x, const float* w_h, const float* b,
                                      std::size_t units, bool reverse) {
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto in = static_cast<Eigen::Index>(x.cols());
  const auto H = static_cast<Eigen::Index>(units);
  Eigen::Map<const Mat> wx(w_x, in, 4 * H), wh(w_h, H, 4 * H);
  Eigen::Map<const Eigen::RowVectorXf> bias(b, 4 * H);
  Eigen::MatrixXf gx = x * wx;
  gx.rowwise() += bias;
  Eigen::MatrixXf out(x.rows(), H);
  Eigen::RowVectorXf h = Eigen::RowVectorXf::Zero(H), c = Eigen::RowVectorXf::Zero(H), g(4 * H);
  const auto steps = x.rows();
  auto sig = [](float v) { return 1.0f / (1.0f + std::exp(-v)); };
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    g.noalias() = gx.row(t) + h * wh;
    for (Eigen::Index k = 0; k < H; ++k) {
      const float i = sig(g(k)), f = sig(g(H + k)), cc = std::tanh(g(2 * H + k)), o = sig(g(3 * H + k));
      c(k) = f * c(k) + i * cc;
      h(k) = o * std::tanh(c(k));
    }
    out.row(t) = h;
  }
  return out;
}

}  // namespace detail

/// Deterministic stand-in weights: uniform(+-1/sqrt(fan_in)), forget bias +1.
inline EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  EncoderParams p;
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    Tensor<float> t(std::move(shape));
    std::uniform_real_distribution<double> d(-1.0 / std::sqrt(double(fan_in)), 1.0 / std::sqrt(double(fan_in)));
    for (auto& v : t.data()) v = static_cast<float>(d(rng));
    return t;
  };
  detail::for_each_encoder_layer(cfg, [&](const std::string& name, std::size_t in, bool conv) {
    if (conv) {
      p.emplace(name + ".w", uniform({cfg.conv_filters, cfg.conv_width * in}, cfg.conv_width * in));
      p.emplace(name + ".b", Tensor<float>({cfg.conv_filters}));
      return;
    }
    const std::size_t H = cfg.bilstm_units;
    for (const char* dir : {".fwd", ".bwd"}) {
      p.emplace(name + dir + ".w_x", uniform({in, 4 * H}, in));
      p.emplace(name + dir + ".w_h", uniform({H, 4 * H}, H));
      Tensor<float> b({4 * H});
      for (std::size_t k = H; k < 2 * H; ++k) b[k] = 1.0f;
      p.emplace(name + dir + ".b", std::move(b));
    }
    p.emplace(name + ".proj.w", uniform({2 * H, cfg.projection_dim}, 2 * H));
    p.emplace(name + ".proj.b", Tensor<float>({cfg.projection_dim}));
  });
  return p;
}

/// FNV-1a over parameter names and value bits.
inline std::uint64_t checksum(const EncoderParams& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (const auto& [name, t] : params) {
    for (char ch : name) mix(static_cast<unsigned char>(ch));
    for (float v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) mix((bits >> (8 * i)) & 0xFFu);
    }
  }
  return h;
}

/// Forward-only encoder pass: T x input_dim -> encoded_length(T) x output_dim.
/// Operates on plain matrices; encoder weights never enter a gradient tape.
inline FeatureSequence encode(const FeatureSequence& x, const EncoderParams& params, const EncoderConfig& cfg) {
  cfg.validate();
  if (x.dim() != cfg.input_dim) {
    throw ShapeError("encoder: input dim " + std::to_string(x.dim()) + " != " + std::to_string(cfg.input_dim));
  }
  if (x.frames() == 0) throw ShapeError("encoder: empty input");
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::MatrixXf cur = Eigen::Map<const Mat>(x.values.data().data(), static_cast<Eigen::Index>(x.frames()),
                                              static_cast<Eigen::Index>(x.dim()));
  auto param = [&](const std::string& name) -> const Tensor<float>& {
    const auto it = params.find(name);
    if (it == params.end()) throw ShapeError("encoder: missing parameter '" + name + "'");
    return it->second;
  };

  detail::for_each_encoder_layer(cfg, [&](const std::string& name, std::size_t in, bool conv) {
    if (static_cast<std::size_t>(cur.cols()) != in) throw ShapeError("encoder: layer input mismatch at " + name);
    const Eigen::Index T = cur.rows();
    if (conv) {
      const auto& w = param(name + ".w");
      const auto& b = param(name + ".b");
      if (w.shape() != Shape{cfg.conv_filters, cfg.conv_width * in}) throw ShapeError("encoder: bad shape for " + name);
      const auto width = static_cast<Eigen::Index>(cfg.conv_width);
      const Eigen::Index pad = (width - 1) / 2;
      const Eigen::Index out_t = static_cast<Eigen::Index>(strided_length(T, cfg.conv_stride));
      Eigen::MatrixXf cols = Eigen::MatrixXf::Zero(out_t, width * cur.cols());
      for (Eigen::Index o = 0; o < out_t; ++o) {
        const Eigen::Index center = o * static_cast<Eigen::Index>(cfg.conv_stride);
        for (Eigen::Index k = 0; k < width; ++k) {
          const Eigen::Index src = center + k - pad;
          if (src >= 0 && src < T) cols.block(o, k * cur.cols(), 1, cur.cols()) = cur.row(src);
        }
      }
      Eigen::Map<const Mat> wm(w.data().data(), static_cast<Eigen::Index>(cfg.conv_filters), width * cur.cols());
      Eigen::Map<const Eigen::RowVectorXf> bias(b.data().data(), static_cast<Eigen::Index>(cfg.conv_filters));
      Eigen::MatrixXf conv_out = cols * wm.transpose();
      conv_out.rowwise() += bias;
      conv_out = conv_out.cwiseMax(0.0f);
      // Max-pool; the final partial window is completed by repeating the last frame.
      const Eigen::Index pooled_t = static_cast<Eigen::Index>(strided_length(out_t, cfg.pool_stride));
      Eigen::MatrixXf pooled(pooled_t, conv_out.cols());
      for (Eigen::Index p = 0; p < pooled_t; ++p) {
        const Eigen::Index start = p * static_cast<Eigen::Index>(cfg.pool_stride);
        pooled.row(p) = conv_out.row(std::min(start, out_t - 1));
        for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(cfg.pool_width); ++k) {
          pooled.row(p) = pooled.row(p).cwiseMax(conv_out.row(std::min(start + k, out_t - 1)));
        }
      }
      cur = std::move(pooled);
      return;
    }
    const std::size_t H = cfg.bilstm_units;
    Eigen::MatrixXf both(T, 2 * static_cast<Eigen::Index>(H));
    int half = 0;
    for (const char* dir : {".fwd", ".bwd"}) {
      const auto& wx = param(name + dir + ".w_x");
      const auto& wh = param(name + dir + ".w_h");
      const auto& b = param(name + dir + ".b");
      if (wx.shape() != Shape{in, 4 * H} || wh.shape() != Shape{H, 4 * H}) {
        throw ShapeError("encoder: bad shape for " + name + dir);
      }
      both.middleCols(half * static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(H)) =
          detail::lstm_direction(cur, wx.data().data(), wh.data().data(), b.data().data(), H, half == 1);
      ++half;
    }
    const auto& pw = param(name + ".proj.w");
    const auto& pb = param(name + ".proj.b");
    Eigen::Map<const Mat> pwm(pw.data().data(), static_cast<Eigen::Index>(2 * H),
                              static_cast<Eigen::Index>(cfg.projection_dim));
    Eigen::Map<const Eigen::RowVectorXf> pbm(pb.data().data(), static_cast<Eigen::Index>(cfg.projection_dim));
    Eigen::MatrixXf projected = both * pwm;
    projected.rowwise() += pbm;
    cur = std::move(projected);
  });

  Tensor<float> out({static_cast<std::size_t>(cur.rows()), static_cast<std::size_t>(cur.cols())});
  Eigen::Map<Mat>(out.data().data(), cur.rows(), cur.cols()) = cur;
  if (!out.all_finite()) throw NumericalError("encoder produced non-finite features");
  return FeatureSequence(std::move(out), x.frame_period * static_cast<double>(cfg.reduction()));
}

}  // namespace asrsent
