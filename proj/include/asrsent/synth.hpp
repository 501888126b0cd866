#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asrsent/encoder.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/example.hpp"
#include "asrsent/features.hpp"

namespace asrsent {

/// Synthetic corpus: noise + per-speaker offset + a class signature planted
/// over a short random span. The label is recoverable only from that span.
struct SynthConfig {
  std::size_t num_examples = 6000;
  std::size_t num_classes = 3;
  std::size_t dim = 64;
  std::size_t min_frames = 20;
  std::size_t max_frames = 100;
  std::size_t cue_length = 5;
  double cue_amplitude = 1.0;
  double noise = 0.5;
  std::size_t num_speakers = 10;
  double speaker_scale = 0.5;   // norm of each speaker's offset vector
  double speaker_style = 0.0;   // norm of each speaker's perturbation of the class signatures
  std::vector<double> priors;   // empty means uniform
  double frame_period = 0.08;

  static std::vector<double> swbd_priors() { return {0.526, 0.304, 0.170}; }

  std::vector<double> resolved_priors() const {
    return priors.empty() ? std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)) : priors;
  }

  void validate() const {
    if (num_classes < 2) throw ShapeError("synth: num_classes must be >= 2");
    if (dim == 0) throw ShapeError("synth: dim must be >= 1");
    if (cue_length == 0 || cue_length > min_frames) throw ShapeError("synth: require 1 <= cue_length <= min_frames");
    if (min_frames > max_frames) throw ShapeError("synth: min_frames > max_frames");
    if (num_speakers == 0) throw ShapeError("synth: num_speakers must be >= 1");
    if (!(noise >= 0.0 && cue_amplitude >= 0.0 && speaker_scale >= 0.0 && speaker_style >= 0.0)) {
      throw ShapeError("synth: amplitudes must be non-negative");
    }
    if (!(frame_period > 0.0)) throw ShapeError("synth: frame_period must be positive");
    const auto p = resolved_priors();
    if (p.size() != num_classes) throw DataError("synth: expected " + std::to_string(num_classes) + " class priors");
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw DataError("synth: class priors must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DataError("synth: class priors sum to " + std::to_string(sum) + ", not 1");
  }
};

inline std::vector<std::string> default_class_names(std::size_t classes) {
  if (classes == 3) return {"neutral", "positive", "negative"};
  if (classes == 4) return {"happy", "neutral", "sad", "angry"};
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

struct Corpus {
  std::vector<SentimentExample> examples;
  std::vector<std::string> class_names;
};

namespace detail {

inline std::vector<float> random_direction(std::size_t dim, double norm, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = n(rng);
    sq += x * x;
  }
  const double s = sq > 0.0 ? norm / std::sqrt(sq) : 0.0;
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * s);
  return out;
}

enum Stream : std::uint64_t { kSignatures = 1, kSpeakers = 2, kExamples = 3, kStyle = 4 };

}  // namespace detail

/// Unit-norm class signatures scaled by the cue amplitude (num_classes x dim).
inline std::vector<std::vector<float>> class_signatures(const SynthConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, detail::kSignatures));
  std::vector<std::vector<float>> out;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) out.push_back(detail::random_direction(cfg.dim, cfg.cue_amplitude, rng));
  return out;
}

/// Tiles [0, frames) with words of 3..8 frames (shorter only when frames < 3).
inline std::vector<AlignedWord> tile_words(std::size_t frames, std::mt19937_64& rng) {
  std::vector<AlignedWord> words;
  std::size_t pos = 0;
  while (pos < frames) {
    const std::size_t rem = frames - pos;
    std::size_t len = rem;
    if (rem > 8) len = std::uniform_int_distribution<std::size_t>(3, std::min<std::size_t>(8, rem - 3))(rng);
    words.push_back({"w" + std::to_string(words.size()), pos, pos + len});
    pos += len;
  }
  return words;
}

/// Index of the word sharing the most frames with the span (earliest on ties).
inline std::size_t cue_word(const std::vector<AlignedWord>& words, const Span& cue) {
  std::size_t best = 0, best_overlap = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::size_t lo = std::max(words[i].start, cue.start), hi = std::min(words[i].end, cue.end);
    const std::size_t overlap = hi > lo ? hi - lo : 0;
    if (overlap > best_overlap) {
      best = i;
      best_overlap = overlap;
    }
  }
  return best;
}

inline Corpus generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto signatures = class_signatures(cfg, seed);
  std::mt19937_64 speaker_rng(derive_seed(seed, detail::kSpeakers));
  std::vector<std::vector<float>> offsets;
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) offsets.push_back(detail::random_direction(cfg.dim, cfg.speaker_scale, speaker_rng));
  std::mt19937_64 style_rng(derive_seed(seed, detail::kStyle));
  std::vector<std::vector<std::vector<float>>> style(cfg.num_speakers);
  for (auto& per_class : style) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) per_class.push_back(detail::random_direction(cfg.dim, cfg.speaker_style, style_rng));
  }
  const auto priors = cfg.resolved_priors();

  Corpus corpus{{}, default_class_names(cfg.num_classes)};
  corpus.examples.reserve(cfg.num_examples);
  for (std::size_t i = 0; i < cfg.num_examples; ++i) {
    std::mt19937_64 rng(derive_seed(seed, detail::kExamples, i));
    SentimentExample ex;
    ex.speaker = static_cast<int>(i % cfg.num_speakers);
    ex.label = std::discrete_distribution<int>(priors.begin(), priors.end())(rng);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(cfg.min_frames, cfg.max_frames)(rng);
    const std::size_t cue_start = std::uniform_int_distribution<std::size_t>(0, T - cfg.cue_length)(rng);
    ex.cue_span = Span{cue_start, cue_start + cfg.cue_length};

    Tensor<float> v({T, cfg.dim});
    std::normal_distribution<double> n(0.0, 1.0);
    const auto& offset = offsets[static_cast<std::size_t>(ex.speaker)];
    const auto& sig = signatures[static_cast<std::size_t>(ex.label)];
    const auto& sty = style[static_cast<std::size_t>(ex.speaker)][static_cast<std::size_t>(ex.label)];
    for (std::size_t t = 0; t < T; ++t) {
      const bool in_cue = t >= cue_start && t < cue_start + cfg.cue_length;
      for (std::size_t d = 0; d < cfg.dim; ++d) {
        double x = cfg.noise * n(rng) + offset[d];
        if (in_cue) x += sig[d] + sty[d];
        v.at(t, d) = static_cast<float>(x);
      }
    }
    ex.features = FeatureSequence(std::move(v), cfg.frame_period);
    ex.alignment = tile_words(T, rng);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

/// Maps a corpus through the frozen encoder; spans are rescaled to encoder frames.
/// Runs one example through the encoder and maps its cue span and word
/// alignment onto the reduced frame grid.
inline SentimentExample encode_example(const SentimentExample& ex, const EncoderParams& params, const EncoderConfig& cfg) {
  const std::size_t r = cfg.reduction();
  auto down = [r](std::size_t f) { return f / r; };
  auto up = [r](std::size_t f) { return (f + r - 1) / r; };
  SentimentExample e = ex;
  e.features = encode(ex.features, params, cfg);
  const std::size_t T = e.features.frames();
  if (ex.cue_span) e.cue_span = Span{down(ex.cue_span->start), std::min(T, std::max(up(ex.cue_span->end), down(ex.cue_span->start) + 1))};
  e.alignment.clear();
  for (const auto& w : ex.alignment) {
    const std::size_t s = down(w.start), t = std::min(T, up(w.end));
    if (!e.alignment.empty() && s < e.alignment.back().end) {
      e.alignment.back().end = std::max(e.alignment.back().end, t);  // merge words that collapse into one frame
      continue;
    }
    e.alignment.push_back({w.token, s, t});
  }
  return e;
}

inline Corpus encode_corpus(const Corpus& in, const EncoderParams& params, const EncoderConfig& cfg) {
  Corpus out{{}, in.class_names};
  for (const auto& ex : in.examples) out.examples.push_back(encode_example(ex, params, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: `path\tlabel\tspeaker\tcue_start\tcue_end\talignment_json` per line.
// A leading `# classes: a,b,c` line names the label set; `-` marks an absent cue.

struct ManifestRecord {
  std::filesystem::path features;
  int label = 0;
  int speaker = 0;
  std::optional<Span> cue_span;
  std::vector<AlignedWord> alignment;

  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;
};

inline std::string alignment_json(const std::vector<AlignedWord>& words) {
  auto j = nlohmann::json::array();
  for (const auto& w : words) j.push_back({w.token, w.start, w.end});
  return j.dump();
}

/// Writes features under dir/features and dir/manifest.tsv; returns the manifest path.
inline std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  const auto manifest = dir / "manifest.tsv";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw DataError("cannot write manifest '" + manifest.string() + "'");
  out << "# classes: ";
  for (std::size_t c = 0; c < corpus.class_names.size(); ++c) out << (c ? "," : "") << corpus.class_names[c];
  out << '\n';
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    const auto& ex = corpus.examples[i];
    std::ostringstream name;
    name << "features/utt" << std::setw(6) << std::setfill('0') << i << ".asrf";
    write_features(ex.features, dir / name.str());
    out << name.str() << '\t' << corpus.class_names.at(static_cast<std::size_t>(ex.label)) << '\t' << ex.speaker << '\t';
    if (ex.cue_span) {
      out << ex.cue_span->start << '\t' << ex.cue_span->end;
    } else {
      out << "-\t-";
    }
    out << '\t' << alignment_json(ex.alignment) << '\n';
  }
  if (!out) throw DataError("failed writing manifest '" + manifest.string() + "'");
  return manifest;
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next - pos));
    if (next == std::string::npos) return out;
    pos = next + 1;
  }
}

inline std::size_t parse_count(const std::string& s, const std::string& what, std::size_t line) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-') {
    throw DataError("manifest line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Parses a manifest. Class names come from its `# classes:` header, else from `fallback_classes`.
inline Manifest read_manifest(const std::filesystem::path& path, std::vector<std::string> fallback_classes = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.class_names = std::move(fallback_classes);
  const auto base = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string key = "# classes:";
      if (line.rfind(key, 0) == 0) {
        std::string names = line.substr(key.size());
        names.erase(0, names.find_first_not_of(' '));
        m.class_names = detail::split(names, ',');
      }
      continue;
    }
    const auto f = detail::split(line, '\t');
    auto fail = [&](const std::string& why) -> DataError {
      return DataError("manifest line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 6) throw fail("expected 6 tab-separated fields, got " + std::to_string(f.size()));
    ManifestRecord r;
    r.features = std::filesystem::path(f[0]).is_absolute() ? std::filesystem::path(f[0]) : base / f[0];
    if (!std::filesystem::exists(r.features)) throw fail("missing feature file '" + r.features.string() + "'");
    const auto it = std::find(m.class_names.begin(), m.class_names.end(), f[1]);
    if (it == m.class_names.end()) throw fail("unknown class '" + f[1] + "'");
    r.label = static_cast<int>(it - m.class_names.begin());
    r.speaker = static_cast<int>(detail::parse_count(f[2], "speaker id", lineno));
    if (f[3] != "-" || f[4] != "-") {
      const auto s = detail::parse_count(f[3], "cue_start", lineno), e = detail::parse_count(f[4], "cue_end", lineno);
      if (e <= s) throw fail("empty cue span");
      r.cue_span = Span{s, e};
    }
    try {
      for (const auto& w : nlohmann::json::parse(f[5])) {
        r.alignment.push_back({w.at(0).get<std::string>(), w.at(1).get<std::size_t>(), w.at(2).get<std::size_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("bad alignment json: ") + e.what());
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw DataError("manifest '" + path.string() + "' has no records");
  return m;
}

inline SentimentExample load_example(const ManifestRecord& r) {
  SentimentExample ex;
  ex.features = read_features(r.features);
  ex.label = r.label;
  ex.speaker = r.speaker;
  ex.cue_span = r.cue_span;
  ex.alignment = r.alignment;
  const std::size_t T = ex.features.frames();
  if (ex.cue_span && ex.cue_span->end > T) throw DataError("cue span exceeds sequence length in " + r.features.string());
  for (const auto& w : ex.alignment) {
    if (w.start > w.end || w.end > T) throw DataError("alignment span exceeds sequence length in " + r.features.string());
  }
  return ex;
}

inline Corpus load_corpus(const Manifest& m) {
  Corpus c{{}, m.class_names};
  for (const auto& r : m.records) c.examples.push_back(load_example(r));
  return c;
}

}  // namespace asrsent
