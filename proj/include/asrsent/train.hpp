#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "asrsent/augment.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/example.hpp"
#include "asrsent/metrics.hpp"
#include "asrsent/model.hpp"
#include "asrsent/ops.hpp"
#include "asrsent/optim.hpp"
#include "asrsent/tape.hpp"

namespace asrsent {

struct TrainConfig {
  double lr = 1e-4;
  double clip_norm = 4.0;
  std::size_t batch_size = 16;
  std::size_t max_steps = 5000;
  std::size_t eval_interval = 250;
  std::size_t eval_batch_size = 64;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;  // share of training data held out for checkpoint selection
  std::size_t bucket_pool = 50;   // batches per length-sorting pool, 0 = plain shuffle
  std::string precision = "float32";
  AdamConfig adam;
  SpecAugmentPolicy augment;

  void validate() const {
    if (!(lr >= 0.0)) throw ShapeError("train: lr must be non-negative");
    if (!(clip_norm > 0.0)) throw ShapeError("train: clip_norm must be positive");
    if (batch_size == 0 || eval_batch_size == 0) throw ShapeError("train: batch sizes must be >= 1");
    if (eval_interval == 0) throw ShapeError("train: eval_interval must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ShapeError("train: holdout_fraction must lie in [0, 1)");
    if (precision != "float32" && precision != "float64") throw ShapeError("train: precision must be float32 or float64");
    augment.validate();
  }
};

// ---------------------------------------------------------------------------
// Batching

template <class T>
struct Batch {
  Tensor<T> features;  // time-major (steps*batch) x D, padded cells zero
  SequenceMask mask;
  std::vector<int> labels;
  std::vector<int> speakers;
  std::vector<std::size_t> indices;  // positions in the source example list
};

/// Shuffled partition of [0, n) into consecutive batches; the last may be short.
inline std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  if (n == 0) throw DataError("cannot batch an empty corpus");
  if (batch_size == 0) throw ShapeError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

/// Like batch_order, but each run of `pool` shuffled batches is re-cut by length
/// so batches hold utterances of similar length (less padding), then the batch
/// order is shuffled again. pool == 0 or 1 gives the plain shuffle.
inline std::vector<std::vector<std::size_t>> bucketed_batch_order(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                                  std::size_t pool, std::mt19937_64& rng) {
  auto batches = batch_order(lengths.size(), batch_size, rng);
  if (pool < 2) return batches;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t p0 = 0; p0 < batches.size(); p0 += pool) {
    const std::size_t p1 = std::min(batches.size(), p0 + pool);
    std::vector<std::size_t> members;
    for (std::size_t b = p0; b < p1; ++b) members.insert(members.end(), batches[b].begin(), batches[b].end());
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    // same batch sizes as before, the short one (if any) stays at the long end
    std::size_t at = 0;
    for (std::size_t b = p0; b < p1; ++b) {
      out.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(at),
                       members.begin() + static_cast<std::ptrdiff_t>(at + batches[b].size()));
      at += batches[b].size();
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

template <class T>
Batch<T> make_batch(std::span<const SentimentExample> examples, std::span<const std::size_t> indices) {
  std::vector<const FeatureSequence*> seqs;
  Batch<T> b;
  for (auto i : indices) {
    const auto& ex = examples[i];
    seqs.push_back(&ex.features);
    b.labels.push_back(ex.label);
    b.speakers.push_back(ex.speaker);
    b.indices.push_back(i);
  }
  auto [x, mask] = pack_sequences<T>(seqs);
  b.features = std::move(x);
  b.mask = std::move(mask);
  return b;
}

template <class T>
std::vector<Batch<T>> make_batches(std::span<const SentimentExample> examples, std::size_t batch_size,
                                   std::mt19937_64& rng) {
  std::vector<Batch<T>> out;
  for (const auto& idx : batch_order(examples.size(), batch_size, rng)) out.push_back(make_batch<T>(examples, idx));
  return out;
}

/// Random disjoint (train, holdout) index split.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(std::size_t n, double fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n > 1) held = std::clamp<std::size_t>(held, 1, n - 1);
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train.begin(), train.end());
  return {train, holdout};
}

inline std::vector<SentimentExample> select(std::span<const SentimentExample> examples, std::span<const std::size_t> idx) {
  std::vector<SentimentExample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(examples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  ConfusionMatrix confusion;
  double loss = 0.0;             // mean cross-entropy
  std::vector<int> predictions;  // in input order
};

/// Batched evaluation in length order (less padding); results map back to input order.
template <class T>
EvalResult evaluate(const DecoderConfig& cfg, const ModelParams<T>& params, std::span<const SentimentExample> examples,
                    std::size_t batch_size = 64) {
  if (examples.empty()) throw DataError("evaluate: no examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].features.frames() < examples[b].features.frames();
  });
  EvalResult out{ConfusionMatrix(cfg.num_classes), 0.0, std::vector<int>(examples.size(), 0)};
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::span<const std::size_t> idx(order.data() + i, std::min(batch_size, order.size() - i));
    const auto batch = make_batch<T>(examples, idx);
    const auto pred = predict_batch(cfg, params, batch.features, batch.mask);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int label = batch.labels[b];
      const int guess = pred.argmax(b);
      out.predictions[idx[b]] = guess;
      out.confusion.add(label, guess);
      double mx = pred.logits.at(b, 0);
      for (std::size_t c = 1; c < pred.logits.cols(); ++c) mx = std::max<double>(mx, pred.logits.at(b, c));
      double se = 0.0;
      for (std::size_t c = 0; c < pred.logits.cols(); ++c) se += std::exp(pred.logits.at(b, c) - mx);
      out.loss += mx + std::log(se) - pred.logits.at(b, static_cast<std::size_t>(label));
    }
  }
  out.loss /= static_cast<double>(examples.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRow {
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double wa = 0.0;
  double ua = 0.0;

  bool operator==(const LogRow&) const = default;
};

inline std::string csv_header() { return "step,split,loss,WA,UA"; }

inline std::string csv_row(const LogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.4f,%.4f", r.step, r.split.c_str(), r.loss, r.wa, r.ua);
  return buf;
}

inline void write_log_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write log '" + path.string() + "'");
  out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_row(r) << '\n';
}

template <class T>
struct TrainResult {
  ModelParams<T> best;   // parameters at the best holdout WA (final when there is no holdout)
  ModelParams<T> final;
  std::size_t best_step = 0;
  double best_wa = 0.0;
  std::size_t steps = 0;
  std::vector<LogRow> log;
};

/// One gradient step on a batch; returns the loss and fills `logits`.
template <class T>
double train_step(const DecoderConfig& cfg, ModelParams<T>& params, AdamState<T>& adam, const Batch<T>& batch,
                  const TrainConfig& tc, Tensor<T>* logits = nullptr) {
  Tape<T> tape;
  const auto p = bind_params(tape, params, true);
  const auto out = decode(cfg, p, tape.constant(batch.features), batch.mask);
  const auto z = classify(p, out.embedding);
  const auto loss = ops::softmax_cross_entropy(z, std::span<const int>(batch.labels));
  auto grads = grad(tape, loss, p);
  clip_global_norm(grads, static_cast<T>(tc.clip_norm));
  adam_step(adam, params, grads, tc.lr);
  if (logits) *logits = z.value();
  return static_cast<double>(loss.value().item());
}

/// Maps an augmented training example to decoder input. Set when augmentation
/// runs before a frozen encoder; the holdout is then expected pre-encoded.
using InputTransform = std::function<SentimentExample(const SentimentExample&)>;

template <class T>
TrainResult<T> train(const DecoderConfig& cfg, std::span<const SentimentExample> train_set,
                     std::span<const SentimentExample> holdout, const TrainConfig& tc,
                     const std::function<void(const LogRow&)>& on_log = {},
                     std::optional<ModelParams<T>> init = std::nullopt, const InputTransform& transform = {}) {
  cfg.validate();
  tc.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  TrainResult<T> result;
  ModelParams<T> params = init ? std::move(*init) : init_params<T>(cfg, derive_seed(tc.seed, 0x1417));
  check_params(cfg, params);
  auto adam = AdamState<T>::zeros_like(params, tc.adam);
  adam.config.lr = tc.lr;

  auto emit = [&](LogRow row) {
    if (on_log) on_log(row);
    result.log.push_back(std::move(row));
  };
  std::vector<std::size_t> lengths;
  for (const auto& ex : train_set) lengths.push_back(ex.features.frames());
  bool have_best = false;
  ConfusionMatrix interval_cm(cfg.num_classes);
  double interval_loss = 0.0;
  std::size_t interval_batches = 0;
  std::size_t step = 0;
  for (std::uint64_t epoch = 0; step < tc.max_steps; ++epoch) {
    std::mt19937_64 order_rng(derive_seed(tc.seed, 0xE90C, epoch));
    for (const auto& idx : bucketed_batch_order(lengths, tc.batch_size, tc.bucket_pool, order_rng)) {
      if (step >= tc.max_steps) break;
      std::vector<SentimentExample> augmented;
      augmented.reserve(idx.size());
      for (auto i : idx) {
        if (tc.augment.enabled) {
          AugmentRng rng(derive_seed(tc.seed, i, epoch));
          augmented.push_back(apply_policy(train_set[i], tc.augment, rng));
        } else {
          augmented.push_back(train_set[i]);
        }
        if (transform) augmented.back() = transform(augmented.back());
      }
      std::vector<std::size_t> local(idx.size());
      std::iota(local.begin(), local.end(), 0);
      const auto batch = make_batch<T>(augmented, local);
      Tensor<T> logits;
      double loss = 0.0;
      try {
        loss = train_step(cfg, params, adam, batch, tc, &logits);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at step " + std::to_string(step + 1) + ": " + e.what());
      }
      ++step;
      interval_loss += loss;
      ++interval_batches;
      for (std::size_t b = 0; b < batch.labels.size(); ++b) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
          if (logits.at(b, c) > logits.at(b, best)) best = c;
        }
        interval_cm.add(batch.labels[b], static_cast<int>(best));
      }
      if (step % tc.eval_interval != 0 && step != tc.max_steps) continue;

      emit({step, "train", interval_loss / static_cast<double>(interval_batches), wa(interval_cm), ua(interval_cm, false)});
      interval_cm = ConfusionMatrix(cfg.num_classes);
      interval_loss = 0.0;
      interval_batches = 0;
      if (!holdout.empty()) {
        const auto ev = evaluate(cfg, params, holdout, tc.eval_batch_size);
        const double hw = wa(ev.confusion);
        emit({step, "holdout", ev.loss, hw, ua(ev.confusion, false)});
        if (!have_best || hw > result.best_wa) {
          have_best = true;
          result.best_wa = hw;
          result.best_step = step;
          result.best = params;
        }
      }
    }
  }
  result.steps = step;
  if (!have_best) {
    result.best = params;
    result.best_step = step;
  }
  result.final = std::move(params);
  return result;
}

template <class U, class T>
ModelParams<U> cast_params(const ModelParams<T>& params) {
  ModelParams<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

/// Trains at tc.precision and hands back float parameters, the checkpoint precision.
inline TrainResult<float> train_at_precision(const DecoderConfig& cfg, std::span<const SentimentExample> train_set,
                                             std::span<const SentimentExample> holdout, const TrainConfig& tc,
                                             const std::function<void(const LogRow&)>& on_log = {},
                                             const InputTransform& transform = {}) {
  if (tc.precision != "float64") return train<float>(cfg, train_set, holdout, tc, on_log, std::nullopt, transform);
  auto r = train<double>(cfg, train_set, holdout, tc, on_log, std::nullopt, transform);
  return {cast_params<float>(r.best), cast_params<float>(r.final), r.best_step, r.best_wa, r.steps, std::move(r.log)};
}

// ---------------------------------------------------------------------------
// Leave-one-speaker-out cross validation

/// Groups the distinct speakers into k folds round-robin (k = 0: one fold per speaker).
inline std::vector<std::vector<int>> speaker_folds(std::span<const int> speakers, std::size_t k = 0) {
  const std::set<int> distinct(speakers.begin(), speakers.end());
  if (distinct.size() < 2) throw DataError("cross validation needs at least 2 distinct speakers");
  const std::size_t folds = k == 0 ? distinct.size() : std::min(k, distinct.size());
  if (folds < 2) throw DataError("cross validation needs at least 2 folds");
  std::vector<std::vector<int>> out(folds);
  std::size_t i = 0;
  for (int s : distinct) out[i++ % folds].push_back(s);
  return out;
}

struct FoldResult {
  std::vector<int> test_speakers;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  ConfusionMatrix confusion;
  std::size_t best_step = 0;
};

struct CvResult {
  std::vector<FoldResult> folds;
  ConfusionMatrix pooled;
  double pooled_wa = 0.0;
  double pooled_ua = 0.0;
  double mean_wa = 0.0;  // unweighted mean over folds
  double mean_ua = 0.0;
};

/// Partition used by loso_cv, exposed for inspection.
inline std::vector<FoldResult> loso_partition(std::span<const SentimentExample> corpus, std::size_t k = 0) {
  std::vector<int> speakers;
  for (const auto& ex : corpus) speakers.push_back(ex.speaker);
  std::vector<FoldResult> out;
  for (auto& group : speaker_folds(speakers, k)) {
    FoldResult f;
    const std::set<int> held(group.begin(), group.end());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      (held.contains(corpus[i].speaker) ? f.test_indices : f.train_indices).push_back(i);
    }
    f.test_speakers = std::move(group);
    out.push_back(std::move(f));
  }
  return out;
}

template <class T>
CvResult loso_cv(const DecoderConfig& cfg, std::span<const SentimentExample> corpus, const TrainConfig& tc,
                 std::size_t k = 0, const std::function<void(std::size_t, const LogRow&)>& on_log = {}) {
  CvResult cv;
  cv.folds = loso_partition(corpus, k);
  cv.pooled = ConfusionMatrix(cfg.num_classes);
  for (std::size_t fi = 0; fi < cv.folds.size(); ++fi) {
    auto& fold = cv.folds[fi];
    TrainConfig fold_tc = tc;
    fold_tc.seed = derive_seed(tc.seed, 0xF01D, fi);
    const auto [tr, ho] = split_holdout(fold.train_indices.size(), tc.holdout_fraction, fold_tc.seed);
    std::vector<std::size_t> tr_idx, ho_idx;
    for (auto i : tr) tr_idx.push_back(fold.train_indices[i]);
    for (auto i : ho) ho_idx.push_back(fold.train_indices[i]);
    const auto train_set = select(corpus, tr_idx);
    const auto holdout = select(corpus, ho_idx);
    const auto test = select(corpus, fold.test_indices);
    std::function<void(const LogRow&)> log;
    if (on_log) log = [&](const LogRow& r) { on_log(fi, r); };
    const auto res = train<T>(cfg, train_set, holdout, fold_tc, log);
    fold.best_step = res.best_step;
    fold.confusion = evaluate(cfg, res.best, test, tc.eval_batch_size).confusion;
    cv.pooled.merge(fold.confusion);
    cv.mean_wa += wa(fold.confusion);
    cv.mean_ua += ua(fold.confusion);
  }
  cv.mean_wa /= static_cast<double>(cv.folds.size());
  cv.mean_ua /= static_cast<double>(cv.folds.size());
  cv.pooled_wa = wa(cv.pooled);
  cv.pooled_ua = ua(cv.pooled);
  return cv;
}

}  // namespace asrsent
