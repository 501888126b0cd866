#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "asrsent/errors.hpp"
#include "asrsent/features.hpp"
#include "asrsent/ops.hpp"
#include "asrsent/optim.hpp"
#include "asrsent/tape.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

enum class Variant { mlp_pool, rnn_pool, rnn_attn };
enum class Pooling { mean, max, last };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::mlp_pool: return "mlp_pool";
    case Variant::rnn_pool: return "rnn_pool";
    case Variant::rnn_attn: return "rnn_attn";
  }
  return "?";
}

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::last: return "last";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "mlp_pool") return Variant::mlp_pool;
  if (s == "rnn_pool") return Variant::rnn_pool;
  if (s == "rnn_attn") return Variant::rnn_attn;
  throw ShapeError("unknown decoder variant '" + s + "'");
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  if (s == "last") return Pooling::last;
  throw ShapeError("unknown pooling '" + s + "'");
}

struct DecoderConfig {
  Variant variant = Variant::rnn_attn;
  Pooling pooling = Pooling::mean;
  std::size_t input_dim = 64;
  std::size_t lstm_units = 64;  // per direction
  std::size_t heads = 8;
  std::size_t head_dim = 32;
  std::vector<std::size_t> mlp_hidden{128, 128};
  std::size_t num_classes = 3;

  std::size_t key_dim() const { return 2 * lstm_units; }

  std::size_t embedding_dim() const {
    switch (variant) {
      case Variant::rnn_attn: return heads * head_dim;
      case Variant::rnn_pool: return key_dim();
      case Variant::mlp_pool: return mlp_hidden.empty() ? input_dim : mlp_hidden.back();
    }
    return 0;
  }

  void validate() const {
    if (input_dim == 0) throw ShapeError("decoder input_dim must be >= 1");
    if (num_classes < 2) throw ShapeError("decoder num_classes must be >= 2");
    if (variant != Variant::mlp_pool && lstm_units == 0) throw ShapeError("lstm_units must be >= 1");
    if (variant == Variant::rnn_attn && (heads == 0 || head_dim == 0)) {
      throw ShapeError("attention heads and head_dim must be >= 1");
    }
    if (variant == Variant::mlp_pool && pooling == Pooling::last) {
      throw ShapeError("mlp_pool supports mean or max pooling only");
    }
  }

  bool operator==(const DecoderConfig&) const = default;
};

template <class T>
using ModelParams = NamedTensors<T>;

template <class T>
using BoundParams = std::map<std::string, Var<T>>;

namespace detail {

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

inline double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace detail

/// Deterministic initialization: uniform(+-1/sqrt(fan_in)) weights, zero
/// biases except +1 on LSTM forget gates.
template <class T>
ModelParams<T> init_params(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> p;
  auto lstm_dir = [&](const std::string& prefix) {
    const std::size_t H = cfg.lstm_units;
    p.emplace(prefix + ".w_x", detail::uniform_tensor<T>({cfg.input_dim, 4 * H}, detail::fan_in_bound(cfg.input_dim), rng));
    p.emplace(prefix + ".w_h", detail::uniform_tensor<T>({H, 4 * H}, detail::fan_in_bound(H), rng));
    Tensor<T> bias({4 * H});
    for (std::size_t k = H; k < 2 * H; ++k) bias[k] = T(1);
    p.emplace(prefix + ".b", std::move(bias));
  };
  switch (cfg.variant) {
    case Variant::mlp_pool: {
      std::size_t in = cfg.input_dim;
      for (std::size_t l = 0; l < cfg.mlp_hidden.size(); ++l) {
        const std::size_t out = cfg.mlp_hidden[l];
        p.emplace("mlp." + std::to_string(l) + ".w", detail::uniform_tensor<T>({in, out}, detail::fan_in_bound(in), rng));
        p.emplace("mlp." + std::to_string(l) + ".b", Tensor<T>({out}));
        in = out;
      }
      break;
    }
    case Variant::rnn_attn: {
      const std::size_t dk = cfg.key_dim();
      // the query is a learned token, not a fan-in weight: unit-variance entries,
      // which is what the 1/sqrt(d_a) logit scaling assumes
      p.emplace("attn.w_q", detail::uniform_tensor<T>({cfg.heads, cfg.head_dim}, std::sqrt(3.0), rng));
      p.emplace("attn.w_k", detail::uniform_tensor<T>({cfg.heads, cfg.head_dim, dk}, detail::fan_in_bound(dk), rng));
      p.emplace("attn.w_v", detail::uniform_tensor<T>({cfg.heads, cfg.head_dim, dk}, detail::fan_in_bound(dk), rng));
      [[fallthrough]];
    }
    case Variant::rnn_pool:
      lstm_dir("lstm.fwd");
      lstm_dir("lstm.bwd");
      break;
  }
  const std::size_t e = cfg.embedding_dim();
  p.emplace("cls.w", detail::uniform_tensor<T>({e, cfg.num_classes}, detail::fan_in_bound(e), rng));
  p.emplace("cls.b", Tensor<T>({cfg.num_classes}));
  return p;
}

/// Checks that a parameter collection has exactly the names and shapes init_params would produce.
template <class T>
void check_params(const DecoderConfig& cfg, const ModelParams<T>& params) {
  const auto expected = init_params<T>(cfg, 0);
  for (const auto& [name, t] : expected) {
    const auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                       shape_string(t.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.contains(name)) throw ShapeError("unexpected parameter '" + name + "'");
  }
}

/// Pads sequences into one time-major (steps*batch) x D tensor; padded cells are zero.
template <class T>
std::pair<Tensor<T>, SequenceMask> pack_sequences(std::span<const FeatureSequence* const> seqs) {
  if (seqs.empty()) throw ShapeError("pack_sequences: empty batch");
  std::vector<std::size_t> lengths;
  const std::size_t dim = seqs.front()->dim();
  for (const auto* s : seqs) {
    if (s->frames() == 0) throw ShapeError("pack_sequences: empty sequence");
    if (s->dim() != dim) throw ShapeError("pack_sequences: feature dimensions differ within batch");
    lengths.push_back(s->frames());
  }
  auto mask = SequenceMask::from_lengths(std::move(lengths));
  Tensor<T> x({mask.rows(), dim});
  for (std::size_t b = 0; b < mask.batch; ++b) {
    for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
      const std::size_t r = mask.row(t, b);
      for (std::size_t d = 0; d < dim; ++d) x.at(r, d) = static_cast<T>(seqs[b]->at(t, d));
    }
  }
  return {std::move(x), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Decoder building blocks

/// Bidirectional LSTM; output rows are [forward h_t, backward h_t] (d_k = 2H).
template <class T>
Var<T> bilstm(const BoundParams<T>& p, Var<T> x, const SequenceMask& mask) {
  auto direction = [&](const std::string& prefix, bool reverse) {
    const auto gates = ops::add_row(ops::matmul(x, p.at(prefix + ".w_x")), p.at(prefix + ".b"));
    return ops::lstm(gates, p.at(prefix + ".w_h"), mask, reverse);
  };
  return ops::concat_cols(direction("lstm.fwd", false), direction("lstm.bwd", true));
}

template <class T>
struct AttentionOutput {
  Var<T> weights;  // rows x heads; column i is a^i over the time-major rows
  Var<T> pooled;   // batch x heads*head_dim; concatenated v^i
};

/// Query-token multi-head attention pooling over hidden states h (rows x d_k):
/// a^i = softmax(w_q^i (w_k^i h^T) / sqrt(d_a)) over valid frames,
/// v^i = w_v^i h^T a^i.
template <class T>
AttentionOutput<T> multi_head_attention(Var<T> h, Var<T> w_q, Var<T> w_k, Var<T> w_v, const SequenceMask& mask) {
  const std::size_t head_dim = w_q.value().cols();
  if (w_k.value().rank() != 3 || w_k.value().dim(0) != w_q.value().rows() || w_k.value().dim(1) != head_dim) {
    throw ShapeError("attention: w_k must be heads x head_dim x d_k");
  }
  const auto keys = ops::matmul_nt(h, w_k);  // rows x heads*head_dim
  const auto scores = ops::group_sum_cols(ops::mul_row(keys, w_q), head_dim);
  const auto logits = ops::scale(scores, T(1) / std::sqrt(static_cast<T>(head_dim)));
  const auto weights = ops::masked_softmax_time(logits, mask);
  const auto values = ops::matmul_nt(h, w_v);
  return {weights, ops::attend(weights, values, mask)};
}

/// Single head i of a stacked parameter set, as 1-head tensors.
template <class T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> head_params(const ModelParams<T>& p, std::size_t head) {
  const auto& q = p.at("attn.w_q");
  const auto& k = p.at("attn.w_k");
  const auto& v = p.at("attn.w_v");
  const std::size_t da = q.dim(1), dk = k.dim(2);
  auto slice = [&](const Tensor<T>& src, Shape shape) {
    const std::size_t n = shape_size(shape);
    std::vector<T> data(src.data().begin() + head * n, src.data().begin() + (head + 1) * n);
    return Tensor<T>(std::move(shape), std::move(data));
  };
  return {slice(q, {1, da}), slice(k, {1, da, dk}), slice(v, {1, da, dk})};
}

template <class T>
struct DecodeResult {
  Var<T> embedding;                 // batch x embedding_dim
  std::optional<Var<T>> attention;  // rows x heads, rnn_attn only
};

template <class T>
DecodeResult<T> decode(const DecoderConfig& cfg, const BoundParams<T>& p, Var<T> x, const SequenceMask& mask) {
  if (mask.batch == 0 || mask.steps == 0) throw ShapeError("decode: empty sequence");
  if (x.value().cols() != cfg.input_dim) {
    throw ShapeError("decode: feature dim " + std::to_string(x.value().cols()) + " != configured " +
                     std::to_string(cfg.input_dim));
  }
  auto pool = [&](Var<T> seq) {
    switch (cfg.pooling) {
      case Pooling::mean: return ops::masked_mean_time(seq, mask);
      case Pooling::max: return ops::masked_max_time(seq, mask);
      case Pooling::last: return ops::last_valid(seq, mask);
    }
    throw ShapeError("unknown pooling");
  };
  switch (cfg.variant) {
    case Variant::mlp_pool: {
      Var<T> hidden = x;
      for (std::size_t l = 0; l < cfg.mlp_hidden.size(); ++l) {
        const std::string prefix = "mlp." + std::to_string(l);
        hidden = ops::relu(ops::add_row(ops::matmul(hidden, p.at(prefix + ".w")), p.at(prefix + ".b")));
      }
      return {pool(hidden), std::nullopt};
    }
    case Variant::rnn_pool:
      return {pool(bilstm(p, x, mask)), std::nullopt};
    case Variant::rnn_attn: {
      const auto att = multi_head_attention(bilstm(p, x, mask), p.at("attn.w_q"), p.at("attn.w_k"), p.at("attn.w_v"), mask);
      return {att.pooled, att.weights};
    }
  }
  throw ShapeError("unknown decoder variant");
}

/// Softmax classifier logits (batch x C).
template <class T>
Var<T> classify(const BoundParams<T>& p, Var<T> embedding) {
  return ops::add_row(ops::matmul(embedding, p.at("cls.w")), p.at("cls.b"));
}

// ---------------------------------------------------------------------------
// Evaluation-mode helpers (no gradients recorded)

/// Per-head attention over one utterance's encoder frames (rows are a^i).
struct AttentionMap {
  Tensor<double> weights{Shape{0, 0}};  // heads x frames
  double frame_period = 0.0;

  std::size_t heads() const { return weights.dim(0); }
  std::size_t frames() const { return weights.dim(1); }
};

template <class T>
struct Prediction {
  Tensor<T> logits;       // batch x C
  Tensor<T> probs;        // batch x C
  Tensor<T> embedding;    // batch x E
  std::optional<Tensor<T>> attention;  // rows x heads
  SequenceMask mask;

  int argmax(std::size_t b) const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (logits.at(b, c) > logits.at(b, best)) best = c;
    }
    return static_cast<int>(best);
  }

  AttentionMap attention_map(std::size_t b, double frame_period) const {
    if (!attention) throw ShapeError("attention map requested from a decoder without attention");
    const std::size_t heads = attention->cols();
    AttentionMap map{Tensor<double>({heads, mask.lengths[b]}), frame_period};
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < mask.lengths[b]; ++t) map.weights.at(h, t) = attention->at(mask.row(t, b), h);
    }
    return map;
  }
};

template <class T>
Prediction<T> predict_batch(const DecoderConfig& cfg, const ModelParams<T>& params, const Tensor<T>& features,
                            const SequenceMask& mask) {
  Tape<T> tape;
  const auto p = bind_params(tape, params, false);
  const auto out = decode(cfg, p, tape.constant(features), mask);
  const auto logits = classify(p, out.embedding);
  Prediction<T> pred{logits.value(), softmax_rows(logits.value()), out.embedding.value(), std::nullopt, mask};
  if (out.attention) pred.attention = out.attention->value();
  return pred;
}

template <class T>
Prediction<T> predict(const DecoderConfig& cfg, const ModelParams<T>& params, const FeatureSequence& seq) {
  const FeatureSequence* one[] = {&seq};
  const auto [x, mask] = pack_sequences<T>(one);
  return predict_batch(cfg, params, x, mask);
}

}  // namespace asrsent
