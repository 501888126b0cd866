#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "asrsent/metrics.hpp"

using namespace asrsent;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t p = 0; p < rows.size(); ++p) m(t, p) = rows[t][p];
  }
  return m;
}

}  // namespace

TEST(Confusion, CountsPairs) {
  const std::vector<int> preds{0, 0, 1, 1}, labels{0, 1, 0, 1};
  const auto m = confusion(preds, labels, 2);
  EXPECT_EQ(m, from_rows({{1, 1}, {1, 1}}));
  EXPECT_EQ(confusion(labels, labels, 2), from_rows({{2, 0}, {0, 2}}));
}

TEST(Confusion, EmptyAndErrors) {
  const std::vector<int> none;
  EXPECT_EQ(confusion(none, none, 3).total(), 0u);
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(confusion(a, b, 2), ShapeError);
  const std::vector<int> bad{2};
  EXPECT_THROW(confusion(bad, b, 2), ShapeError);
  EXPECT_THROW(wa(ConfusionMatrix(2)), DataError);
  EXPECT_THROW(ua(ConfusionMatrix(2)), DataError);
}

TEST(Accuracy, TwoByTwo) {
  const auto m = from_rows({{8, 2}, {4, 6}});
  EXPECT_DOUBLE_EQ(wa(m), 70.0);
  EXPECT_DOUBLE_EQ(ua(m), 70.0);
  const auto d = from_rows({{3, 0}, {0, 9}});
  EXPECT_DOUBLE_EQ(wa(d), 100.0);
  EXPECT_DOUBLE_EQ(ua(d), 100.0);
}

TEST(Accuracy, ConstantNeutralBaseline) {
  // Priors 52.6 / 30.4 / 17.0 per thousand, everything predicted neutral (class 0).
  const auto m = from_rows({{526, 0, 0}, {304, 0, 0}, {170, 0, 0}});
  EXPECT_DOUBLE_EQ(wa(m), 52.6);
  EXPECT_EQ(format_pct(ua(m)), "33.33");
  EXPECT_NEAR(ua(m), 100.0 / 3.0, 1e-12);
}

TEST(Accuracy, AbsentClassIsExcludedAndFlagged) {
  const auto m = from_rows({{2, 1, 0}, {0, 3, 0}, {0, 0, 0}});
  const auto report = MetricsReport::from(m, false);
  EXPECT_EQ(report.ua_excluded_classes, (std::vector<std::size_t>{2}));
  EXPECT_DOUBLE_EQ(report.ua, 100.0 * (2.0 / 3.0 + 1.0) / 2.0);
  EXPECT_FALSE(report.per_class_recall[2].has_value());
  const auto j = report.to_json();
  EXPECT_TRUE(j["per_class_recall"][2].is_null());
  EXPECT_EQ(j["confusion"][0][1], 1);
}

TEST(Accuracy, BalancedClassesGiveEqualWaUa) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng() % 4;
    const std::size_t per = 1 + rng() % 20;
    ConfusionMatrix m(C);
    for (std::size_t t = 0; t < C; ++t) {
      for (std::size_t i = 0; i < per; ++i) m(t, rng() % C) += 1;
    }
    EXPECT_NEAR(wa(m), ua(m), 1e-9);
  }
}

TEST(Accuracy, InvariantUnderRelabeling) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng() % 5;
    ConfusionMatrix m(C);
    for (std::size_t t = 0; t < C; ++t) {
      for (std::size_t p = 0; p < C; ++p) m(t, p) = 1 + rng() % 9;
    }
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix q(C);
    for (std::size_t t = 0; t < C; ++t) {
      for (std::size_t p = 0; p < C; ++p) q(perm[t], perm[p]) = m(t, p);
    }
    EXPECT_DOUBLE_EQ(wa(m), wa(q));
    EXPECT_NEAR(ua(m), ua(q), 1e-9);
  }
}

// Brute force: replay random label/prediction lists one example at a time.
TEST(Accuracy, MatchesBruteForceCounting) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int C = 2 + static_cast<int>(rng() % 5);
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % C);
      preds[i] = static_cast<int>(rng() % C);
    }
    const auto m = confusion(preds, labels, static_cast<std::size_t>(C));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += preds[i] == labels[i];
    double recall_sum = 0.0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
      std::size_t hits = 0, support = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != c) continue;
        ++support;
        hits += preds[i] == c;
      }
      if (support == 0) continue;
      recall_sum += static_cast<double>(hits) / static_cast<double>(support);
      ++present;
    }
    ASSERT_EQ(wa(m), 100.0 * static_cast<double>(correct) / static_cast<double>(n));
    ASSERT_EQ(ua(m, false), 100.0 * recall_sum / present);
    ASSERT_EQ(m.total(), n);
  }
}
