#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "asrsent/errors.hpp"
#include "asrsent/example.hpp"
#include "asrsent/model.hpp"

namespace asrsent {

enum class RenderFormat { ansi, html };

inline RenderFormat parse_render_format(const std::string& s) {
  if (s == "ansi") return RenderFormat::ansi;
  if (s == "html") return RenderFormat::html;
  throw ShapeError("unknown render format '" + s + "' (expected ansi or html)");
}

/// Attention row of one head, or the mean over heads when `head` is empty.
inline std::vector<double> attention_row(const AttentionMap& map, std::optional<std::size_t> head = std::nullopt) {
  std::vector<double> row(map.frames(), 0.0);
  if (head) {
    if (*head >= map.heads()) throw ShapeError("head " + std::to_string(*head) + " out of range");
    for (std::size_t t = 0; t < map.frames(); ++t) row[t] = map.weights.at(*head, t);
    return row;
  }
  for (std::size_t h = 0; h < map.heads(); ++h) {
    for (std::size_t t = 0; t < map.frames(); ++t) row[t] += map.weights.at(h, t);
  }
  for (auto& v : row) v /= static_cast<double>(map.heads());
  return row;
}

/// Attention mass inside [span.start, span.end) of the selected (or mean) row.
inline double span_mass(const AttentionMap& map, const Span& span, std::optional<std::size_t> head = std::nullopt) {
  const auto row = attention_row(map, head);
  double m = 0.0;
  for (std::size_t t = span.start; t < std::min(span.end, row.size()); ++t) m += row[t];
  return m;
}

/// Mean attention over the frames of each word. Word spans are in encoder frames.
inline std::vector<double> word_attention(const AttentionMap& map, const std::vector<AlignedWord>& words,
                                          std::optional<std::size_t> head = std::nullopt) {
  const auto row = attention_row(map, head);
  std::vector<double> out;
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w.start > w.end || w.end > row.size()) {
      throw DataError("word '" + w.token + "' spans frames [" + std::to_string(w.start) + ", " +
                      std::to_string(w.end) + ") outside [0, " + std::to_string(row.size()) + ")");
    }
    if (i > 0 && w.start < prev_end && w.start < w.end) {
      throw DataError("word '" + w.token + "' overlaps the previous word");
    }
    if (w.start == w.end) {
      std::fprintf(stderr, "warning: word '%s' covers no frames; weight set to 0\n", w.token.c_str());
      out.push_back(0.0);
      continue;
    }
    double s = 0.0;
    for (std::size_t t = w.start; t < w.end; ++t) s += row[t];
    out.push_back(s / static_cast<double>(w.end - w.start));
    prev_end = w.end;
  }
  return out;
}

/// Per-utterance terciles of the normalized rank: bin = min(2, floor(3 r / (n - 1)))
/// with r the number of strictly smaller weights, so tied words share the
/// lower bin and the largest weight always reaches bin 2.
inline std::vector<int> quantize_bins(const std::vector<double>& weights) {
  const std::size_t n = weights.size();
  std::vector<int> bins(n, 0);
  if (n < 2) return bins;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (double w : weights) r += w < weights[i];
    bins[i] = static_cast<int>(std::min<std::size_t>(2, 3 * r / (n - 1)));
  }
  return bins;
}

namespace detail {

inline const char* const kAnsiBins[3] = {"\x1b[48;5;254m", "\x1b[48;5;221m", "\x1b[48;5;202m"};

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render(const std::vector<std::string>& words, const std::vector<int>& bins, RenderFormat format) {
  if (words.size() != bins.size()) {
    throw ShapeError("render: " + std::to_string(words.size()) + " words but " + std::to_string(bins.size()) + " bins");
  }
  if (words.empty()) return {};
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (bins[i] < 0 || bins[i] > 2) throw ShapeError("render: bin ids must be 0, 1 or 2");
    if (i) out += ' ';
    if (format == RenderFormat::ansi) {
      out += detail::kAnsiBins[bins[i]] + words[i] + "\x1b[0m";
    } else {
      out += "<span class=\"attn-bin" + std::to_string(bins[i]) + "\">" + detail::html_escape(words[i]) + "</span>";
    }
  }
  out += '\n';
  return out;
}

/// Standalone page around a rendered html fragment.
inline std::string html_page(const std::string& fragment, const std::string& title) {
  return "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + detail::html_escape(title) +
         "</title>\n<style>\n"
         ".attn-bin0 { background: #eeeeee; }\n"
         ".attn-bin1 { background: #ffd75f; }\n"
         ".attn-bin2 { background: #ff5f00; }\n"
         "span { padding: 0 2px; }\n"
         "</style></head>\n<body><p>" +
         fragment + "</p></body></html>\n";
}

}  // namespace asrsent
