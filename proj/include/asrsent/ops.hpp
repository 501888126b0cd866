#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "asrsent/errors.hpp"
#include "asrsent/tape.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

/// Time-major layout of a padded batch: row t*batch + b holds frame t of
/// utterance b. Utterance b has lengths[b] leading valid frames.
struct SequenceMask {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;

  static SequenceMask full(std::size_t steps) { return {1, steps, {steps}}; }

  static SequenceMask from_lengths(std::vector<std::size_t> lengths) {
    const std::size_t steps = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
    const std::size_t batch = lengths.size();
    return {batch, steps, std::move(lengths)};
  }

  std::size_t row(std::size_t t, std::size_t b) const { return t * batch + b; }
  bool valid(std::size_t t, std::size_t b) const { return t < lengths[b]; }
  std::size_t rows() const { return batch * steps; }
};

namespace ops {

namespace detail {

template <class T>
Shape with_last(const Shape& shape, std::size_t last) {
  Shape out = shape.empty() ? Shape{1} : shape;
  out.back() = last;
  return out;
}

inline void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

template <class T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a (rows x k) times b (k x n). Leading extents of a are kept.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(bv.rank() == 2 && av.cols() == bv.dim(0), "matmul: inner dimensions differ");
  Tensor<T> out(detail::with_last<T>(av.shape(), bv.dim(1)));
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
  });
}

/// a (rows x k) times transpose(b), with b viewed as (m x k).
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ");
  Tensor<T> out(detail::with_last<T>(av.shape(), bv.rows()));
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)).noalias() += as_matrix(g) * as_matrix(b.value());
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor<T> out = a.value();
  as_matrix(out) += as_matrix(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)) += as_matrix(g);
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)) += as_matrix(g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  as_matrix(out) -= as_matrix(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)) += as_matrix(g);
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)) -= as_matrix(g);
  });
}

/// Hadamard product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = a.value();
  as_matrix(out).array() *= as_matrix(b.value()).array();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)).array() += as_matrix(g).array() * as_matrix(b.value()).array();
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)).array() += as_matrix(g).array() * as_matrix(a.value()).array();
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  as_matrix(out) *= factor;
  return a.tape()->record(std::move(out), {a}, [a, factor](Tape<T>& tape, const Tensor<T>& g) {
    as_matrix(tape.grad(a)) += factor * as_matrix(g);
  });
}

/// Adds a row vector (bias) to every row of a.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  detail::require(row.value().size() == a.value().cols(), "add_row: bias length differs from columns");
  Tensor<T> out = a.value();
  const auto r = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(row.value().data().data(),
                                                                       row.value().size());
  as_matrix(out).rowwise() += r;
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)) += as_matrix(g);
    if (tape.requires_grad(row)) {
      auto& gr = tape.grad(row);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gr.data().data(), gr.size()) +=
          as_matrix(g).colwise().sum();
    }
  });
}

/// Multiplies every row of a elementwise by a row vector.
template <class T>
Var<T> mul_row(Var<T> a, Var<T> row) {
  detail::require(row.value().size() == a.value().cols(), "mul_row: row length differs from columns");
  Tensor<T> out = a.value();
  const auto r = Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(row.value().data().data(),
                                                                      row.value().size());
  as_matrix(out).array().rowwise() *= r;
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape<T>& tape, const Tensor<T>& g) {
    const auto rv = Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(row.value().data().data(),
                                                                         row.value().size());
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)).array() += as_matrix(g).array().rowwise() * rv;
    if (tape.requires_grad(row)) {
      auto& gr = tape.grad(row);
      Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>>(gr.data().data(), gr.size()) +=
          (as_matrix(g).array() * as_matrix(a.value()).array()).colwise().sum();
    }
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return a.tape()->record(std::move(out), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    // Recompute from the input; the output tensor is not captured.
    auto& ga = tape.grad(a);
    const auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T y = std::tanh(x[i]);
      ga[i] += g[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = detail::sigmoid(v);
  return a.tape()->record(std::move(out), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    const auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T y = detail::sigmoid(x[i]);
      ga[i] += g[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return a.tape()->record(std::move(out), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    const auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  return a.tape()->record(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    for (auto& v : ga.data()) v += g[0];
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Column-wise concatenation of two matrices with equal row counts.
template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.rows() == bv.rows(), "concat_cols: row counts differ");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor<T> out({av.rows(), ca + cb});
  as_matrix(out).leftCols(ca) = as_matrix(av);
  as_matrix(out).rightCols(cb) = as_matrix(bv);
  return a.tape()->record(std::move(out), {a, b}, [a, b, ca, cb](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a)) as_matrix(tape.grad(a)) += as_matrix(g).leftCols(ca);
    if (tape.requires_grad(b)) as_matrix(tape.grad(b)) += as_matrix(g).rightCols(cb);
  });
}

/// Sums each consecutive run of `group` columns: (rows x k*group) -> (rows x k).
template <class T>
Var<T> group_sum_cols(Var<T> a, std::size_t group) {
  const auto& av = a.value();
  detail::require(group > 0 && av.cols() % group == 0, "group_sum_cols: columns not divisible by group");
  const std::size_t k = av.cols() / group;
  Tensor<T> out({av.rows(), k});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < group; ++i) acc += av.at(r, j * group + i);
      out.at(r, j) = acc;
    }
  }
  return a.tape()->record(std::move(out), {a}, [a, group, k](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < group; ++i) ga.at(r, j * group + i) += g.at(r, j);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Masked sequence ops (time-major rows, see SequenceMask)

/// Softmax over the valid time steps of each (utterance, column) pair.
/// Padded rows receive exactly zero probability.
template <class T>
Var<T> masked_softmax_time(Var<T> logits, const SequenceMask& mask) {
  const auto& lv = logits.value();
  detail::require(lv.rows() == mask.rows(), "masked_softmax_time: rows differ from mask");
  const std::size_t cols = lv.cols();
  Tensor<T> out(lv.shape());
  for (std::size_t b = 0; b < mask.batch; ++b) {
    if (mask.lengths[b] == 0) throw ShapeError("masked_softmax_time: utterance with zero valid frames");
    for (std::size_t c = 0; c < cols; ++c) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < mask.lengths[b]; ++t) mx = std::max(mx, lv.at(mask.row(t, b), c));
      T z = 0;
      for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
        const T e = std::exp(lv.at(mask.row(t, b), c) - mx);
        out.at(mask.row(t, b), c) = e;
        z += e;
      }
      for (std::size_t t = 0; t < mask.lengths[b]; ++t) out.at(mask.row(t, b), c) /= z;
    }
  }
  auto probs = std::make_shared<const Tensor<T>>(out);
  return logits.tape()->record(std::move(out), {logits}, [logits, mask, probs](Tape<T>& tape, const Tensor<T>& g) {
    const auto& p = *probs;
    auto& gl = tape.grad(logits);
    for (std::size_t b = 0; b < mask.batch; ++b) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        T dot = 0;
        for (std::size_t t = 0; t < mask.lengths[b]; ++t) dot += g.at(mask.row(t, b), c) * p.at(mask.row(t, b), c);
        for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
          const std::size_t r = mask.row(t, b);
          gl.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
        }
      }
    }
  });
}

/// Per-head attention readout: weights (rows x heads), values (rows x heads*d)
/// -> (batch x heads*d), out[b, h*d + j] = sum_t weights[t,b,h] * values[t,b,h*d+j].
template <class T>
Var<T> attend(Var<T> weights, Var<T> values, const SequenceMask& mask) {
  const auto& wv = weights.value();
  const auto& vv = values.value();
  detail::require(wv.rows() == mask.rows() && vv.rows() == mask.rows(), "attend: rows differ from mask");
  const std::size_t heads = wv.cols();
  detail::require(heads > 0 && vv.cols() % heads == 0, "attend: value columns not divisible by heads");
  const std::size_t d = vv.cols() / heads;
  Tensor<T> out({mask.batch, vv.cols()});
  for (std::size_t b = 0; b < mask.batch; ++b) {
    for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
      const std::size_t r = mask.row(t, b);
      for (std::size_t h = 0; h < heads; ++h) {
        const T a = wv.at(r, h);
        for (std::size_t j = 0; j < d; ++j) out.at(b, h * d + j) += a * vv.at(r, h * d + j);
      }
    }
  }
  return weights.tape()->record(
      std::move(out), {weights, values}, [weights, values, mask, heads, d](Tape<T>& tape, const Tensor<T>& g) {
        const bool gw = tape.requires_grad(weights), gv = tape.requires_grad(values);
        const auto& wv = weights.value();
        const auto& vv = values.value();
        for (std::size_t b = 0; b < mask.batch; ++b) {
          for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
            const std::size_t r = mask.row(t, b);
            for (std::size_t h = 0; h < heads; ++h) {
              T dw = 0;
              for (std::size_t j = 0; j < d; ++j) {
                const T go = g.at(b, h * d + j);
                dw += go * vv.at(r, h * d + j);
                if (gv) tape.grad(values).at(r, h * d + j) += go * wv.at(r, h);
              }
              if (gw) tape.grad(weights).at(r, h) += dw;
            }
          }
        }
      });
}

/// Mean over valid frames: (rows x F) -> (batch x F).
template <class T>
Var<T> masked_mean_time(Var<T> x, const SequenceMask& mask) {
  const auto& xv = x.value();
  detail::require(xv.rows() == mask.rows(), "masked_mean_time: rows differ from mask");
  const std::size_t f = xv.cols();
  Tensor<T> out({mask.batch, f});
  for (std::size_t b = 0; b < mask.batch; ++b) {
    if (mask.lengths[b] == 0) throw ShapeError("masked_mean_time: utterance with zero valid frames");
    for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
      for (std::size_t c = 0; c < f; ++c) out.at(b, c) += xv.at(mask.row(t, b), c);
    }
    const T inv = T(1) / static_cast<T>(mask.lengths[b]);
    for (std::size_t c = 0; c < f; ++c) out.at(b, c) *= inv;
  }
  return x.tape()->record(std::move(out), {x}, [x, mask, f](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad(x);
    for (std::size_t b = 0; b < mask.batch; ++b) {
      const T inv = T(1) / static_cast<T>(mask.lengths[b]);
      for (std::size_t t = 0; t < mask.lengths[b]; ++t) {
        for (std::size_t c = 0; c < f; ++c) gx.at(mask.row(t, b), c) += g.at(b, c) * inv;
      }
    }
  });
}

/// Max over valid frames. Ties route the gradient to the earliest frame.
template <class T>
Var<T> masked_max_time(Var<T> x, const SequenceMask& mask) {
  const auto& xv = x.value();
  detail::require(xv.rows() == mask.rows(), "masked_max_time: rows differ from mask");
  const std::size_t f = xv.cols();
  Tensor<T> out({mask.batch, f});
  std::vector<std::size_t> argmax(mask.batch * f, 0);
  for (std::size_t b = 0; b < mask.batch; ++b) {
    if (mask.lengths[b] == 0) throw ShapeError("masked_max_time: utterance with zero valid frames");
    for (std::size_t c = 0; c < f; ++c) {
      std::size_t best = mask.row(0, b);
      for (std::size_t t = 1; t < mask.lengths[b]; ++t) {
        const std::size_t r = mask.row(t, b);
        if (xv.at(r, c) > xv.at(best, c)) best = r;
      }
      argmax[b * f + c] = best;
      out.at(b, c) = xv.at(best, c);
    }
  }
  return x.tape()->record(std::move(out), {x}, [x, mask, f, argmax](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad(x);
    for (std::size_t b = 0; b < mask.batch; ++b) {
      for (std::size_t c = 0; c < f; ++c) gx.at(argmax[b * f + c], c) += g.at(b, c);
    }
  });
}

/// Row of the last valid frame of each utterance: (rows x F) -> (batch x F).
template <class T>
Var<T> last_valid(Var<T> x, const SequenceMask& mask) {
  const auto& xv = x.value();
  detail::require(xv.rows() == mask.rows(), "last_valid: rows differ from mask");
  const std::size_t f = xv.cols();
  Tensor<T> out({mask.batch, f});
  for (std::size_t b = 0; b < mask.batch; ++b) {
    if (mask.lengths[b] == 0) throw ShapeError("last_valid: utterance with zero valid frames");
    const std::size_t r = mask.row(mask.lengths[b] - 1, b);
    for (std::size_t c = 0; c < f; ++c) out.at(b, c) = xv.at(r, c);
  }
  return x.tape()->record(std::move(out), {x}, [x, mask, f](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad(x);
    for (std::size_t b = 0; b < mask.batch; ++b) {
      const std::size_t r = mask.row(mask.lengths[b] - 1, b);
      for (std::size_t c = 0; c < f; ++c) gx.at(r, c) += g.at(b, c);
    }
  });
}

// ---------------------------------------------------------------------------
// Recurrence

/// One direction of an LSTM over a padded, time-major batch.
///
/// `input_gates` holds the precomputed x_t W_x + b for every row (rows x 4H),
/// gate order (input, forget, cell, output). `recurrent` is H x 4H. Padded
/// frames leave the state untouched and output zero, so a padded utterance
/// produces exactly the same valid outputs as the same utterance alone.
template <class T>
Var<T> lstm(Var<T> input_gates, Var<T> recurrent, const SequenceMask& mask, bool reverse) {
  const auto& gx = input_gates.value();
  const auto& wh = recurrent.value();
  detail::require(wh.rank() == 2 && wh.dim(1) == 4 * wh.dim(0), "lstm: recurrent weight must be H x 4H");
  const std::size_t H = wh.dim(0);
  const std::size_t B = mask.batch, steps = mask.steps;
  detail::require(gx.rows() == mask.rows() && gx.cols() == 4 * H, "lstm: input gates must be rows x 4H");

  using Mat = RowMatrix<T>;
  Tensor<T> out({mask.rows(), H});
  // Saved for the backward pass: gate activations and the state after each step.
  auto acts = std::make_shared<Tensor<T>>(Shape{mask.rows(), 4 * H});
  auto cstate = std::make_shared<Tensor<T>>(Shape{mask.rows(), H});
  auto hstate = std::make_shared<Tensor<T>>(Shape{mask.rows(), H});

  using Arr = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat h_prev = Mat::Zero(B, H), c_prev = Mat::Zero(B, H);
  Mat gates(B, 4 * H);
  Arr a(B, 4 * H), c(B, H), h(B, H);
  const auto wh_m = as_matrix(wh);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const std::size_t r0 = t * B;
    gates.noalias() = as_matrix(gx).middleRows(r0, B);
    gates.noalias() += h_prev * wh_m;
    // whole block at once, padded rows are patched up below
    a.leftCols(2 * H) = gates.leftCols(2 * H).array().logistic();
    a.middleCols(2 * H, H) = gates.middleCols(2 * H, H).array().tanh();
    a.rightCols(H) = gates.rightCols(H).array().logistic();
    c = a.middleCols(H, H) * c_prev.array() + a.leftCols(H) * a.middleCols(2 * H, H);
    h = a.rightCols(H) * c.tanh();
    auto acts_blk = as_matrix(*acts).middleRows(r0, B);
    auto out_blk = as_matrix(out).middleRows(r0, B);
    for (std::size_t b = 0; b < B; ++b) {
      if (!mask.valid(t, b)) continue;
      acts_blk.row(b) = a.row(b).matrix();
      c_prev.row(b) = c.row(b).matrix();
      h_prev.row(b) = h.row(b).matrix();
      out_blk.row(b) = h.row(b).matrix();
    }
    as_matrix(*cstate).middleRows(r0, B) = c_prev;
    as_matrix(*hstate).middleRows(r0, B) = h_prev;
  }

  return input_gates.tape()->record(
      std::move(out), {input_gates, recurrent},
      [input_gates, recurrent, mask, reverse, H, acts, cstate, hstate](Tape<T>& tape, const Tensor<T>& g) {
        const std::size_t B = mask.batch, steps = mask.steps;
        const auto wh_m = as_matrix(recurrent.value());
        using Arr = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Mat dh = Mat::Zero(B, H), dc = Mat::Zero(B, H), dgates(B, 4 * H), hp(B, H), cp(B, H), dc_keep(B, H);
        Mat dwh = Mat::Zero(H, 4 * H);
        const bool need_gx = tape.requires_grad(input_gates);
        const bool need_wh = tape.requires_grad(recurrent);
        for (std::size_t s = steps; s-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - s : s;
          const bool has_prev = s > 0;
          const std::size_t tp = reverse ? t + 1 : t - 1;
          dc_keep = dc;
          const auto A = as_matrix(*acts).middleRows(t * B, B).array();
          const auto i = A.leftCols(H), f = A.middleCols(H, H), gg = A.middleCols(2 * H, H), o = A.rightCols(H);
          const Arr tc = as_matrix(*cstate).middleRows(t * B, B).array().tanh();
          const Arr dh_b = dh.array() + as_matrix(g).middleRows(t * B, B).array();
          const Arr dc_b = dc.array() + dh_b * o * (T(1) - tc.square());
          if (has_prev) {
            cp = as_matrix(*cstate).middleRows(tp * B, B);
          } else {
            cp.setZero();
          }
          dgates.leftCols(H).array() = dc_b * gg * i * (T(1) - i);
          dgates.middleCols(H, H).array() = dc_b * cp.array() * f * (T(1) - f);
          dgates.middleCols(2 * H, H).array() = dc_b * i * (T(1) - gg.square());
          dgates.rightCols(H).array() = dh_b * tc * o * (T(1) - o);
          dc.array() = dc_b * f;
          // padded rows carry no gradient and leave the running adjoints alone
          for (std::size_t b = 0; b < B; ++b) {
            if (mask.valid(t, b)) {
              dh.row(b).setZero();
            } else {
              dgates.row(b).setZero();
              dc.row(b) = dc_keep.row(b);
            }
          }
          if (need_gx) as_matrix(tape.grad(input_gates)).middleRows(t * B, B) += dgates;
          if (has_prev) {
            hp = as_matrix(*hstate).middleRows(tp * B, B);
            if (need_wh) dwh.noalias() += hp.transpose() * dgates;
          }
          dh.noalias() += dgates * wh_m.transpose();
        }
        if (need_wh) as_matrix(tape.grad(recurrent)) += dwh;
      });
}

// ---------------------------------------------------------------------------
// Classification

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& lv = logits.value();
  const std::size_t B = lv.rows(), C = lv.cols();
  detail::require(labels.size() == B, "softmax_cross_entropy: one label per row required");
  Tensor<T> probs({B, C});
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[b]) + " out of range");
    }
    T mx = lv.at(b, 0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, lv.at(b, c));
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(lv.at(b, c) - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) probs.at(b, c) = std::exp(lv.at(b, c) - lse);
    loss += lse - lv.at(b, static_cast<std::size_t>(labels[b]));
  }
  loss /= static_cast<T>(B);
  std::vector<int> owned(labels.begin(), labels.end());
  return logits.tape()->record(Tensor<T>::scalar(loss), {logits},
                               [logits, probs = std::move(probs), owned](Tape<T>& tape, const Tensor<T>& g) {
                                 auto& gl = tape.grad(logits);
                                 const std::size_t B = probs.rows(), C = probs.cols();
                                 const T s = g[0] / static_cast<T>(B);
                                 for (std::size_t b = 0; b < B; ++b) {
                                   for (std::size_t c = 0; c < C; ++c) {
                                     const T onehot = static_cast<int>(c) == owned[b] ? T(1) : T(0);
                                     gl.at(b, c) += s * (probs.at(b, c) - onehot);
                                   }
                                 }
                               });
}

}  // namespace ops

/// Row-wise numerically stable softmax (not recorded).
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    T mx = logits.at(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(r, c));
    T z = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      out.at(r, c) = std::exp(logits.at(r, c) - mx);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out.at(r, c) /= z;
  }
  return out;
}

}  // namespace asrsent
