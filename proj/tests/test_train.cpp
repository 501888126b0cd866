#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "asrsent/synth.hpp"
#include "asrsent/train.hpp"

using namespace asrsent;

namespace {

SynthConfig tiny_corpus(std::size_t n, std::size_t speakers = 4) {
  SynthConfig cfg;
  cfg.num_examples = n;
  cfg.dim = 8;
  cfg.min_frames = 8;
  cfg.max_frames = 16;
  cfg.cue_length = 3;
  cfg.cue_amplitude = 3.0;
  cfg.noise = 0.3;
  cfg.num_speakers = speakers;
  return cfg;
}

DecoderConfig tiny_model(Variant v = Variant::rnn_attn) {
  DecoderConfig cfg;
  cfg.variant = v;
  cfg.input_dim = 8;
  cfg.lstm_units = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.mlp_hidden = {16};
  return cfg;
}

TrainConfig fast(std::size_t steps, double lr = 1e-2) {
  TrainConfig tc;
  tc.lr = lr;
  tc.max_steps = steps;
  tc.eval_interval = std::max<std::size_t>(1, steps / 4);
  tc.batch_size = 8;
  tc.augment.enabled = false;
  return tc;
}

}  // namespace

TEST(CrossEntropy, KnownValues) {
  Tape<double> tape;
  const std::vector<int> label{2};
  const auto uniform = ops::softmax_cross_entropy(tape.constant(Tensor<double>({1, 4}, 0.5)), std::span<const int>(label));
  EXPECT_NEAR(uniform.value().item(), std::log(4.0), 1e-12);
  const auto confident = ops::softmax_cross_entropy(tape.constant(Tensor<double>({1, 3}, {0.0, 0.0, 30.0})),
                                                    std::span<const int>(label));
  EXPECT_LT(confident.value().item(), 1e-9);
  EXPECT_GE(confident.value().item(), 0.0);
  const std::vector<int> bad{3};
  EXPECT_THROW(ops::softmax_cross_entropy(tape.constant(Tensor<double>({1, 3})), std::span<const int>(bad)), ShapeError);
}

TEST(Batching, SizesOrderAndPadding) {
  auto corpus = generate(tiny_corpus(10), 1).examples;
  std::mt19937_64 rng(5);
  const auto batches = make_batches<float>(corpus, 4, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].labels.size(), 4u);
  EXPECT_EQ(batches[1].labels.size(), 4u);
  EXPECT_EQ(batches[2].labels.size(), 2u);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    seen.insert(b.indices.begin(), b.indices.end());
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      EXPECT_EQ(b.mask.lengths[i], corpus[b.indices[i]].features.frames());
      for (std::size_t t = b.mask.lengths[i]; t < b.mask.steps; ++t) {
        for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(b.features.at(b.mask.row(t, i), d), 0.0f);
      }
    }
  }
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));

  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(batch_order(10, 4, a), batch_order(10, 4, b));
  std::mt19937_64 c(1);
  EXPECT_THROW(batch_order(0, 4, c), DataError);
}

TEST(Batching, BucketedOrderIsAPartitionWithSameSizes) {
  std::vector<std::size_t> lengths;
  std::mt19937_64 gen(4);
  for (int i = 0; i < 103; ++i) lengths.push_back(20 + gen() % 80);
  std::mt19937_64 a(3), b(3), plain(3);
  const auto order = bucketed_batch_order(lengths, 8, 5, a);
  EXPECT_EQ(order, bucketed_batch_order(lengths, 8, 5, b));
  std::multiset<std::size_t> sizes, want_sizes, seen;
  for (const auto& batch : batch_order(lengths.size(), 8, plain)) want_sizes.insert(batch.size());
  for (const auto& batch : order) {
    sizes.insert(batch.size());
    seen.insert(batch.begin(), batch.end());
  }
  EXPECT_EQ(sizes, want_sizes);
  EXPECT_EQ(seen.size(), lengths.size());
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), lengths.size());

  // pooled batches are tighter in length than random ones
  auto spread = [&](const std::vector<std::vector<std::size_t>>& batches) {
    std::size_t total = 0;
    for (const auto& batch : batches) {
      std::size_t lo = 1000, hi = 0;
      for (auto i : batch) lo = std::min(lo, lengths[i]), hi = std::max(hi, lengths[i]);
      total += hi - lo;
    }
    return total;
  };
  std::mt19937_64 c(3);
  EXPECT_LT(spread(order), spread(batch_order(lengths.size(), 8, c)));

  std::mt19937_64 d(3), e(3);
  EXPECT_EQ(bucketed_batch_order(lengths, 8, 1, d), batch_order(lengths.size(), 8, e));
}

TEST(Batching, EqualLengthsHaveNoPadding) {
  auto cfg = tiny_corpus(6);
  cfg.min_frames = cfg.max_frames = 12;
  const auto corpus = generate(cfg, 2).examples;
  std::mt19937_64 rng(1);
  for (const auto& b : make_batches<float>(corpus, 3, rng)) {
    EXPECT_EQ(b.mask.steps, 12u);
    for (auto len : b.mask.lengths) EXPECT_EQ(len, 12u);
  }
}

TEST(Train, ZeroLearningRateLeavesParams) {
  const auto corpus = generate(tiny_corpus(16), 3).examples;
  const auto model = tiny_model();
  auto tc = fast(5, 0.0);
  const auto init = init_params<float>(model, 42);
  const auto res = train<float>(model, corpus, {}, tc, {}, init);
  EXPECT_EQ(res.final, init);
  EXPECT_EQ(res.steps, 5u);
}

TEST(Train, OverfitsSmallSet) {
  const auto corpus = generate(tiny_corpus(32), 4).examples;
  const auto model = tiny_model();
  const auto res = train<float>(model, corpus, {}, fast(400));
  const auto ev = evaluate(model, res.final, std::span<const SentimentExample>(corpus));
  EXPECT_DOUBLE_EQ(wa(ev.confusion), 100.0);
}

TEST(Train, ReproducibleLogAndAugmentationEffect) {
  const auto corpus = generate(tiny_corpus(40), 5).examples;
  const std::span<const SentimentExample> all(corpus);
  const auto model = tiny_model();
  auto tc = fast(20);
  tc.eval_interval = 5;
  const auto a = train<float>(model, all.subspan(0, 32), all.subspan(32), tc);
  const auto b = train<float>(model, all.subspan(0, 32), all.subspan(32), tc);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.final, b.final);
  tc.augment.enabled = true;
  tc.augment.freq_F = 4;
  const auto c = train<float>(model, all.subspan(0, 32), all.subspan(32), tc);
  EXPECT_NE(a.log.front().loss, c.log.front().loss);
  EXPECT_EQ(a.log.size(), c.log.size());
  for (const auto& [name, t] : c.final) EXPECT_EQ(t.shape(), a.final.at(name).shape());
}

TEST(Train, BestCheckpointTracksHoldout) {
  const auto corpus = generate(tiny_corpus(60), 6).examples;
  const std::span<const SentimentExample> all(corpus);
  const auto res = train<float>(tiny_model(), all.subspan(0, 40), all.subspan(40), fast(40));
  double best = -1.0;
  std::size_t best_step = 0;
  for (const auto& r : res.log) {
    if (r.split == "holdout" && r.wa > best) {
      best = r.wa;
      best_step = r.step;
    }
  }
  EXPECT_EQ(res.best_step, best_step);
  EXPECT_DOUBLE_EQ(res.best_wa, best);
  const auto ev = evaluate(tiny_model(), res.best, all.subspan(40));
  EXPECT_DOUBLE_EQ(wa(ev.confusion), best);
}

TEST(Train, LossDecreasesEarly) {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto corpus = generate(tiny_corpus(200), 10 + seed).examples;
    auto tc = fast(200, 3e-3);
    tc.eval_interval = 50;
    tc.seed = seed;
    const auto res = train<float>(tiny_model(), corpus, {}, tc);
    drops.push_back(res.log.front().loss - res.log.back().loss);
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[1], 0.0);
}

TEST(Train, NonFiniteInputAbortsWithStep) {
  auto corpus = generate(tiny_corpus(8), 7).examples;
  corpus[3].features.at(0, 0) = std::numeric_limits<float>::infinity();
  auto tc = fast(4);
  tc.batch_size = 8;
  try {
    train<float>(tiny_model(), corpus, {}, tc);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, CsvLog) {
  const std::vector<LogRow> rows{{10, "train", 0.5, 60.0, 55.5}, {10, "holdout", 0.25, 70.0, 65.0}};
  const auto path = std::filesystem::temp_directory_path() / "asrsent_log.csv";
  write_log_csv(rows, path);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "step,split,loss,WA,UA");
  EXPECT_EQ(first, "10,train,0.500000,60.0000,55.5000");
}

TEST(Train, HoldoutSplitIsDisjoint) {
  const auto [tr, ho] = split_holdout(100, 0.1, 3);
  EXPECT_EQ(ho.size(), 10u);
  EXPECT_EQ(tr.size(), 90u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (auto i : ho) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 100u);
}

TEST(Loso, PartitionProperties) {
  for (std::size_t speakers = 2; speakers <= 10; ++speakers) {
    const auto corpus = generate(tiny_corpus(3 * speakers + 1, speakers), speakers).examples;
    for (std::size_t k : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
      const auto folds = loso_partition(corpus, k);
      EXPECT_EQ(folds.size(), k == 0 ? speakers : std::min(k, speakers));
      std::vector<int> covered(corpus.size(), 0);
      for (const auto& f : folds) {
        std::set<int> test_spk, train_spk;
        for (auto i : f.test_indices) {
          test_spk.insert(corpus[i].speaker);
          ++covered[i];
        }
        for (auto i : f.train_indices) train_spk.insert(corpus[i].speaker);
        for (int s : test_spk) EXPECT_FALSE(train_spk.contains(s));
        EXPECT_EQ(f.test_indices.size() + f.train_indices.size(), corpus.size());
      }
      for (int c : covered) EXPECT_EQ(c, 1);
    }
  }
  const auto one = generate(tiny_corpus(5, 1), 1).examples;
  EXPECT_THROW(loso_partition(one), DataError);
}

TEST(Loso, TwoSpeakerRun) {
  const auto corpus = generate(tiny_corpus(40, 2), 8).examples;
  auto tc = fast(30);
  const auto cv = loso_cv<float>(tiny_model(Variant::mlp_pool), corpus, tc);
  ASSERT_EQ(cv.folds.size(), 2u);
  EXPECT_EQ(cv.pooled.total(), 40u);
  EXPECT_NEAR(cv.pooled_wa, wa(cv.pooled), 1e-12);
  const double mean = (wa(cv.folds[0].confusion) + wa(cv.folds[1].confusion)) / 2.0;
  EXPECT_NEAR(cv.mean_wa, mean, 1e-12);
}

// Speaker-specific cue signatures: held-out speakers are harder than seen ones.
TEST(Loso, UnseenSpeakersGeneralizeWorse) {
  std::vector<double> loso, random;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = tiny_corpus(300, 6);
    cfg.speaker_style = 3.0;
    cfg.cue_amplitude = 1.0;
    const auto corpus = generate(cfg, 100 + seed).examples;
    auto tc = fast(300, 5e-3);
    tc.seed = seed;
    tc.holdout_fraction = 0.0;
    const auto model = tiny_model(Variant::mlp_pool);
    auto pooled = tiny_model(Variant::mlp_pool);
    pooled.pooling = Pooling::max;
    loso.push_back(loso_cv<float>(pooled, corpus, tc, 3).pooled_wa);
    const auto [tr, te] = split_holdout(corpus.size(), 1.0 / 3.0, seed);
    const auto res = train<float>(pooled, select(corpus, tr), {}, tc);
    random.push_back(wa(evaluate(pooled, res.final, std::span<const SentimentExample>(select(corpus, te))).confusion));
  }
  std::sort(loso.begin(), loso.end());
  std::sort(random.begin(), random.end());
  EXPECT_LE(loso[2], random[2]);
}
