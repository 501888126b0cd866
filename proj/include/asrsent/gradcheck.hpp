#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "asrsent/model.hpp"
#include "asrsent/tape.hpp"

namespace asrsent {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;  // "name[index]" of the worst coordinate
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from being judged on finite-difference noise alone.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `loss_fn` with central finite
/// differences on `coords` randomly sampled parameter coordinates (all of
/// them if fewer exist).
inline GradCheckReport check_gradients(
    const ModelParams<double>& params,
    const std::function<Var<double>(Tape<double>&, const BoundParams<double>&)>& loss_fn, std::size_t coords,
    std::uint64_t seed, double step = 1e-5) {
  Tape<double> tape;
  const auto bound = bind_params(tape, params, true);
  const auto analytic = grad(tape, loss_fn(tape, bound), bound);

  std::vector<std::pair<std::string, std::size_t>> all;
  for (const auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.size(); ++i) all.emplace_back(name, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(coords, all.size()));

  auto eval = [&](const ModelParams<double>& p) {
    Tape<double> t;
    return loss_fn(t, bind_params(t, p, false)).value().item();
  };

  GradCheckReport report;
  ModelParams<double> probe = params;
  for (const auto& [name, i] : all) {
    const double orig = probe.at(name)[i];
    probe.at(name)[i] = orig + step;
    const double up = eval(probe);
    probe.at(name)[i] = orig - step;
    const double down = eval(probe);
    probe.at(name)[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic.at(name)[i], numeric);
    if (err > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = err;
      report.worst = name + "[" + std::to_string(i) + "]";
    }
    ++report.coords;
  }
  return report;
}

/// Small random decoder of the given variant, scored by cross-entropy on a
/// padded batch of random sequences (64-bit).
inline GradCheckReport gradcheck_decoder(Variant variant, std::uint64_t seed, std::size_t coords = 200,
                                         Pooling pooling = Pooling::mean) {
  DecoderConfig cfg;
  cfg.variant = variant;
  cfg.pooling = pooling;
  cfg.input_dim = 5;
  cfg.lstm_units = 4;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.mlp_hidden = {8, 6};
  cfg.num_classes = 3;
  auto params = init_params<double>(cfg, seed);

  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  // Zero biases put ReLU units exactly on their kink whenever an input row is
  // all zeros, where finite differences are meaningless.
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  for (auto& [name, t] : params) {
    if (name.ends_with(".b")) {
      for (auto& v : t.data()) v += jitter(rng);
    }
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<std::size_t> lengths{5, 3, 7};
  std::vector<FeatureSequence> seqs;
  for (auto len : lengths) {
    FeatureSequence s(Tensor<float>({len, cfg.input_dim}), 0.08);
    for (auto& v : s.values.data()) v = static_cast<float>(normal(rng));
    seqs.push_back(std::move(s));
  }
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const auto [x, mask] = pack_sequences<double>(ptrs);
  const std::vector<int> labels{0, 2, 1};

  auto loss_fn = [&, x = x, mask = mask](Tape<double>& tape, const BoundParams<double>& p) {
    const auto out = decode(cfg, p, tape.constant(x), mask);
    return ops::softmax_cross_entropy(classify(p, out.embedding), labels);
  };
  return check_gradients(params, loss_fn, coords, seed);
}

}  // namespace asrsent
