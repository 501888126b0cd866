#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "asrsent/errors.hpp"

namespace asrsent {

/// counts[true][predicted].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_.at(truth * classes_ + pred); }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_.at(truth * classes_ + pred); }

  void add(int truth, int pred) {
    if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= classes_ ||
        static_cast<std::size_t>(pred) >= classes_) {
      throw ShapeError("confusion: class id out of range [0, " + std::to_string(classes_) + ")");
    }
    ++(*this)(static_cast<std::size_t>(truth), static_cast<std::size_t>(pred));
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ShapeError("confusion: cannot merge matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t n = 0;
    for (std::size_t p = 0; p < classes_; ++p) n += (*this)(truth, p);
    return n;
  }

  std::uint64_t trace() const {
    std::uint64_t n = 0;
    for (std::size_t c = 0; c < classes_; ++c) n += (*this)(c, c);
    return n;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
  if (preds.size() != labels.size()) {
    throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) m.add(labels[i], preds[i]);
  return m;
}

/// Weighted accuracy in percent: 100 * trace / total.
inline double wa(const ConfusionMatrix& m) {
  const auto n = m.total();
  if (n == 0) throw DataError("wa: empty confusion matrix");
  return 100.0 * static_cast<double>(m.trace()) / static_cast<double>(n);
}

/// Recall of each class; empty rows have no recall.
inline std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& m) {
  std::vector<std::optional<double>> out(m.classes());
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const auto row = m.row_sum(c);
    if (row > 0) out[c] = static_cast<double>(m(c, c)) / static_cast<double>(row);
  }
  return out;
}

/// Classes whose true-label row is empty; they do not enter UA.
inline std::vector<std::size_t> classes_without_support(const ConfusionMatrix& m) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    if (m.row_sum(c) == 0) out.push_back(c);
  }
  return out;
}

/// Unweighted accuracy in percent: mean per-class recall over classes that
/// occur in the labels. Absent classes are excluded and reported to stderr.
inline double ua(const ConfusionMatrix& m, bool warn = true) {
  if (m.total() == 0) throw DataError("ua: empty confusion matrix");
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& r : per_class_recall(m)) {
    if (!r) continue;
    sum += *r;
    ++used;
  }
  if (warn && used < m.classes()) {
    std::string ids;
    for (auto c : classes_without_support(m)) ids += (ids.empty() ? "" : ",") + std::to_string(c);
    std::fprintf(stderr, "warning: UA excludes class(es) %s with no examples\n", ids.c_str());
  }
  return 100.0 * sum / static_cast<double>(used);
}

inline std::string format_pct(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

struct MetricsReport {
  double wa = 0.0;
  double ua = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> per_class_recall;
  std::vector<std::size_t> ua_excluded_classes;

  static MetricsReport from(const ConfusionMatrix& m, bool warn = true) {
    return {asrsent::wa(m), asrsent::ua(m, warn), m, asrsent::per_class_recall(m), classes_without_support(m)};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["wa"] = wa;
    j["ua"] = ua;
    auto rows = nlohmann::json::array();
    for (std::size_t t = 0; t < confusion.classes(); ++t) {
      auto row = nlohmann::json::array();
      for (std::size_t p = 0; p < confusion.classes(); ++p) row.push_back(confusion(t, p));
      rows.push_back(row);
    }
    j["confusion"] = rows;
    auto recall = nlohmann::json::array();
    for (const auto& r : per_class_recall) recall.push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
    j["per_class_recall"] = recall;
    j["ua_excluded_classes"] = ua_excluded_classes;
    return j;
  }
};

}  // namespace asrsent
