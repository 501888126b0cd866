#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "asrsent/errors.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

template <class T>
using NamedTensors = std::map<std::string, Tensor<T>>;

template <class T>
T global_norm(const NamedTensors<T>& tensors) {
  T acc = 0;
  for (const auto& [name, t] : tensors) acc += squared_norm(t);
  return std::sqrt(acc);
}

struct ClipResult {
  double norm_before = 0.0;
  bool clipped = false;
};

/// Rescales all gradients by max_norm / g when their joint L2 norm g exceeds max_norm.
template <class T>
ClipResult clip_global_norm(NamedTensors<T>& grads, T max_norm) {
  if (!(max_norm > T(0))) throw ShapeError("clip_global_norm: max_norm must be positive");
  for (const auto& [name, t] : grads) {
    if (!t.all_finite()) throw NumericalError("clip_global_norm: non-finite gradient in '" + name + "'");
  }
  const T norm = global_norm(grads);
  ClipResult result{static_cast<double>(norm), false};
  if (norm > max_norm) {
    const T factor = max_norm / norm;
    for (auto& [name, t] : grads) {
      for (auto& v : t.data()) v *= factor;
    }
    result.clipped = true;
  }
  return result;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for bias-corrected Adam.
template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  NamedTensors<T> m;
  NamedTensors<T> v;

  static AdamState zeros_like(const NamedTensors<T>& params, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    for (const auto& [name, p] : params) {
      s.m.emplace(name, Tensor<T>(p.shape()));
      s.v.emplace(name, Tensor<T>(p.shape()));
    }
    return s;
  }
};

template <class T>
void adam_step(AdamState<T>& state, NamedTensors<T>& params, const NamedTensors<T>& grads, double lr) {
  if (!(lr >= 0.0)) throw ShapeError("adam_step: learning rate must be non-negative");
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    const auto m = state.m.find(name);
    if (g == grads.end() || m == state.m.end()) throw ShapeError("adam_step: missing tensor '" + name + "'");
    if (g->second.shape() != p.shape() || m->second.shape() != p.shape()) {
      throw ShapeError("adam_step: shape mismatch for '" + name + "'");
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<T>(c.beta1 * m[i] + (1.0 - c.beta1) * g[i]);
      v[i] = static_cast<T>(c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i]);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

}  // namespace asrsent
