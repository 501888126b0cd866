#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "asrsent/augment.hpp"
#include "asrsent/encoder.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/frontend.hpp"
#include "asrsent/model.hpp"
#include "asrsent/synth.hpp"
#include "asrsent/train.hpp"

namespace asrsent {

/// Everything a CLI run can be configured with. The file format is INI-style:
///
///   [model]
///   variant = rnn_attn
///   mlp_hidden = 128,128
///
/// and `--set section.key=value` overrides individual keys.
struct RunConfig {
  FrontendConfig frontend;
  EncoderConfig encoder;
  std::uint64_t encoder_seed = 0;
  DecoderConfig model;
  TrainConfig train;  // train.augment holds the [augment] section
  SynthConfig synth;
  std::size_t synth_test_examples = 1000;
  bool synth_through_encoder = false;
  std::string augment_stage = "decoder";  // or "encoder": mask features before the frozen encoder
};

namespace detail {

struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

template <class V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw DataError("config key '" + key + "': expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return text;
  } else {
    if constexpr (std::is_unsigned_v<V>) {
      if (!text.empty() && text.front() == '-') throw DataError("config key '" + key + "': expected a non-negative value");
    }
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) throw DataError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
  }
}

template <class V>
std::vector<V> parse_list(const std::string& key, const std::string& text) {
  std::vector<V> out;
  if (text.empty()) return out;
  for (const auto& part : split(text, ',')) {
    std::string s = part;
    s.erase(0, s.find_first_not_of(' '));
    s.erase(s.find_last_not_of(' ') + 1);
    out.push_back(parse_value<V>(key, s));
  }
  return out;
}

inline const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    // Scalar member of a nested struct: sect is a pointer-to-member of RunConfig, m a pointer-to-member of that struct.
    auto bind = [&t](const std::string& key, auto sect, auto m) {
      t[key] = Binding{[key, sect, m](RunConfig& c, const std::string& text) {
                         using V = std::remove_cvref_t<decltype(c.*sect.*m)>;
                         (c.*sect).*m = parse_value<V>(key, text);
                       },
                       [sect, m](const RunConfig& c) { return nlohmann::json((c.*sect).*m); }};
    };
    auto top = [&t](const std::string& key, auto m) {
      t[key] = Binding{[key, m](RunConfig& c, const std::string& text) {
                         using V = std::remove_cvref_t<decltype(c.*m)>;
                         c.*m = parse_value<V>(key, text);
                       },
                       [m](const RunConfig& c) { return nlohmann::json(c.*m); }};
    };
    using R = RunConfig;
    bind("frontend.sample_rate", &R::frontend, &FrontendConfig::sample_rate);
    bind("frontend.window_ms", &R::frontend, &FrontendConfig::window_ms);
    bind("frontend.hop_ms", &R::frontend, &FrontendConfig::hop_ms);
    bind("frontend.mel_bins", &R::frontend, &FrontendConfig::mel_bins);
    bind("frontend.fft_size", &R::frontend, &FrontendConfig::fft_size);
    bind("frontend.log_floor", &R::frontend, &FrontendConfig::log_floor);
    bind("frontend.low_hz", &R::frontend, &FrontendConfig::low_hz);
    bind("frontend.high_hz", &R::frontend, &FrontendConfig::high_hz);
    bind("frontend.normalize", &R::frontend, &FrontendConfig::normalize);

    bind("encoder.input_dim", &R::encoder, &EncoderConfig::input_dim);
    bind("encoder.conv_filters", &R::encoder, &EncoderConfig::conv_filters);
    bind("encoder.conv_width", &R::encoder, &EncoderConfig::conv_width);
    bind("encoder.conv_stride", &R::encoder, &EncoderConfig::conv_stride);
    bind("encoder.pool_width", &R::encoder, &EncoderConfig::pool_width);
    bind("encoder.pool_stride", &R::encoder, &EncoderConfig::pool_stride);
    bind("encoder.macro_repeats", &R::encoder, &EncoderConfig::macro_repeats);
    bind("encoder.bilstm_layers", &R::encoder, &EncoderConfig::bilstm_layers);
    bind("encoder.bilstm_units", &R::encoder, &EncoderConfig::bilstm_units);
    bind("encoder.projection_dim", &R::encoder, &EncoderConfig::projection_dim);
    bind("encoder.lstm_inside_macro", &R::encoder, &EncoderConfig::lstm_inside_macro);
    top("encoder.seed", &R::encoder_seed);

    bind("model.input_dim", &R::model, &DecoderConfig::input_dim);
    bind("model.lstm_units", &R::model, &DecoderConfig::lstm_units);
    bind("model.heads", &R::model, &DecoderConfig::heads);
    bind("model.head_dim", &R::model, &DecoderConfig::head_dim);
    bind("model.num_classes", &R::model, &DecoderConfig::num_classes);
    t["model.variant"] = {[](RunConfig& c, const std::string& s) {
                            try {
                              c.model.variant = parse_variant(s);
                            } catch (const ShapeError& e) {
                              throw DataError(e.what());
                            }
                          },
                          [](const RunConfig& c) { return nlohmann::json(to_string(c.model.variant)); }};
    t["model.pooling"] = {[](RunConfig& c, const std::string& s) {
                            try {
                              c.model.pooling = parse_pooling(s);
                            } catch (const ShapeError& e) {
                              throw DataError(e.what());
                            }
                          },
                          [](const RunConfig& c) { return nlohmann::json(to_string(c.model.pooling)); }};
    t["model.mlp_hidden"] = {[](RunConfig& c, const std::string& s) {
                               c.model.mlp_hidden = parse_list<std::size_t>("model.mlp_hidden", s);
                             },
                             [](const RunConfig& c) { return nlohmann::json(c.model.mlp_hidden); }};

    bind("train.lr", &R::train, &TrainConfig::lr);
    bind("train.clip_norm", &R::train, &TrainConfig::clip_norm);
    bind("train.batch_size", &R::train, &TrainConfig::batch_size);
    bind("train.bucket_pool", &R::train, &TrainConfig::bucket_pool);
    bind("train.max_steps", &R::train, &TrainConfig::max_steps);
    bind("train.eval_interval", &R::train, &TrainConfig::eval_interval);
    bind("train.eval_batch_size", &R::train, &TrainConfig::eval_batch_size);
    bind("train.seed", &R::train, &TrainConfig::seed);
    bind("train.holdout_fraction", &R::train, &TrainConfig::holdout_fraction);
    bind("train.precision", &R::train, &TrainConfig::precision);
    t["train.adam_beta1"] = {[](RunConfig& c, const std::string& s) { c.train.adam.beta1 = parse_value<double>("train.adam_beta1", s); },
                             [](const RunConfig& c) { return nlohmann::json(c.train.adam.beta1); }};
    t["train.adam_beta2"] = {[](RunConfig& c, const std::string& s) { c.train.adam.beta2 = parse_value<double>("train.adam_beta2", s); },
                             [](const RunConfig& c) { return nlohmann::json(c.train.adam.beta2); }};
    t["train.adam_eps"] = {[](RunConfig& c, const std::string& s) { c.train.adam.eps = parse_value<double>("train.adam_eps", s); },
                           [](const RunConfig& c) { return nlohmann::json(c.train.adam.eps); }};

    auto aug = [&t](const std::string& key, auto m) {
      t[key] = Binding{[key, m](RunConfig& c, const std::string& text) {
                         using V = std::remove_cvref_t<decltype(c.train.augment.*m)>;
                         c.train.augment.*m = parse_value<V>(key, text);
                       },
                       [m](const RunConfig& c) { return nlohmann::json(c.train.augment.*m); }};
    };
    aug("augment.enabled", &SpecAugmentPolicy::enabled);
    aug("augment.warp_W", &SpecAugmentPolicy::warp_W);
    aug("augment.freq_F", &SpecAugmentPolicy::freq_F);
    aug("augment.freq_mF", &SpecAugmentPolicy::freq_mF);
    aug("augment.time_T", &SpecAugmentPolicy::time_T);
    aug("augment.time_p", &SpecAugmentPolicy::time_p);
    aug("augment.time_mT", &SpecAugmentPolicy::time_mT);
    aug("augment.mask_value", &SpecAugmentPolicy::mask_value);
    aug("augment.reference_frame_period", &SpecAugmentPolicy::reference_frame_period);
    top("augment.stage", &R::augment_stage);

    bind("synth.num_examples", &R::synth, &SynthConfig::num_examples);
    bind("synth.num_classes", &R::synth, &SynthConfig::num_classes);
    bind("synth.dim", &R::synth, &SynthConfig::dim);
    bind("synth.min_frames", &R::synth, &SynthConfig::min_frames);
    bind("synth.max_frames", &R::synth, &SynthConfig::max_frames);
    bind("synth.cue_length", &R::synth, &SynthConfig::cue_length);
    bind("synth.cue_amplitude", &R::synth, &SynthConfig::cue_amplitude);
    bind("synth.noise", &R::synth, &SynthConfig::noise);
    bind("synth.num_speakers", &R::synth, &SynthConfig::num_speakers);
    bind("synth.speaker_scale", &R::synth, &SynthConfig::speaker_scale);
    bind("synth.speaker_style", &R::synth, &SynthConfig::speaker_style);
    bind("synth.frame_period", &R::synth, &SynthConfig::frame_period);
    top("synth.test_examples", &R::synth_test_examples);
    top("synth.through_encoder", &R::synth_through_encoder);
    t["synth.priors"] = {[](RunConfig& c, const std::string& s) {
                           if (s == "uniform") {
                             c.synth.priors.clear();
                           } else if (s == "swbd") {
                             c.synth.priors = SynthConfig::swbd_priors();
                           } else {
                             c.synth.priors = parse_list<double>("synth.priors", s);
                           }
                         },
                         [](const RunConfig& c) {
                           return c.synth.priors.empty() ? nlohmann::json("uniform") : nlohmann::json(c.synth.priors);
                         }};
    return t;
  }();
  return table;
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::bindings();
  const auto it = table.find(key);
  if (it == table.end()) throw DataError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

/// Applies a `section.key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw DataError("override '" + assignment + "' is not of the form section.key=value");
  set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw DataError("config '" + path.string() + "': " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw DataError("config '" + path.string() + "': key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_config_value(cfg, section + "." + key, value.data());
  }
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (file) apply_config_file(cfg, *file);
  for (const auto& o : overrides) apply_override(cfg, o);
  if (cfg.augment_stage != "decoder" && cfg.augment_stage != "encoder") {
    throw DataError("config key 'augment.stage': expected decoder or encoder, got '" + cfg.augment_stage + "'");
  }
  return cfg;
}

/// Resolved configuration as nested JSON ({"model": {"variant": ...}, ...}).
inline nlohmann::json config_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, b] : detail::bindings()) {
    const auto dot = key.find('.');
    j[key.substr(0, dot)][key.substr(dot + 1)] = b.get(cfg);
  }
  return j;
}

/// Writes the resolved configuration back out in the config file format.
inline std::string config_ini(const RunConfig& cfg) {
  std::string out, current;
  for (const auto& [key, b] : detail::bindings()) {
    const auto dot = key.find('.');
    const auto section = key.substr(0, dot);
    if (section != current) {
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
      current = section;
    }
    const auto v = b.get(cfg);
    std::string text;
    if (v.is_string()) {
      text = v.get<std::string>();
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) text += (i ? "," : "") + v[i].dump();
    } else {
      text = v.dump();
    }
    out += key.substr(dot + 1) + " = " + text + "\n";
  }
  return out;
}

}  // namespace asrsent
