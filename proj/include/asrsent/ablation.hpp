#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "asrsent/metrics.hpp"
#include "asrsent/model.hpp"
#include "asrsent/train.hpp"

namespace asrsent {

/// One row of the decoder/augmentation ablation: a decoder variant trained with
/// or without SpecAugment, everything else held fixed.
struct AblationSetting {
  std::string name;
  Variant variant = Variant::rnn_attn;
  bool augment = true;
};

/// Base model first, then the two pooling decoders, then the base without augmentation.
inline std::vector<AblationSetting> ablation_settings() {
  return {{"rnn_attn+aug", Variant::rnn_attn, true},
          {"mlp_pool", Variant::mlp_pool, true},
          {"rnn_pool", Variant::rnn_pool, true},
          {"rnn_attn-aug", Variant::rnn_attn, false}};
}

struct AblationRow {
  AblationSetting setting;
  double wa = 0.0;
  double ua = 0.0;
};

/// Trains and scores one configuration; returns the pooled test confusion.
using AblationRunner = std::function<ConfusionMatrix(const DecoderConfig&, const TrainConfig&)>;

inline std::vector<AblationRow> run_ablation(const DecoderConfig& base, const TrainConfig& tc, const AblationRunner& run) {
  std::vector<AblationRow> rows;
  for (const auto& s : ablation_settings()) {
    DecoderConfig cfg = base;
    cfg.variant = s.variant;
    TrainConfig t = tc;
    t.augment.enabled = tc.augment.enabled && s.augment;
    const auto cm = run(cfg, t);
    rows.push_back({s, wa(cm), ua(cm, false)});
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "description        WA (%)   UA (%)\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.2f\n", r.setting.name.c_str(), r.wa, r.ua);
    out += buf;
  }
  return out;
}

/// Row-wise medians over repeated ablations (e.g. several seeds).
inline std::vector<AblationRow> median_rows(const std::vector<std::vector<AblationRow>>& runs) {
  if (runs.empty()) return {};
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::vector<AblationRow> out;
  for (std::size_t i = 0; i < runs.front().size(); ++i) {
    std::vector<double> w, u;
    for (const auto& run : runs) {
      w.push_back(run.at(i).wa);
      u.push_back(run.at(i).ua);
    }
    out.push_back({runs.front()[i].setting, median(w), median(u)});
  }
  return out;
}

}  // namespace asrsent
