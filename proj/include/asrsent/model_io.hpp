#pragma once

#include <filesystem>
#include <string>

#include "asrsent/checkpoint.hpp"
#include "asrsent/errors.hpp"
#include "asrsent/model.hpp"

namespace asrsent {

// The decoder configuration travels inside the checkpoint as "config.*"
// entries next to the parameters, so a checkpoint file is self-describing.

inline NamedTensors<float> model_entries(const DecoderConfig& cfg, const ModelParams<float>& params) {
  check_params(cfg, params);
  NamedTensors<float> out = params;
  auto put = [&](const std::string& key, std::size_t v) { out.emplace("config." + key, Tensor<float>::scalar(static_cast<float>(v))); };
  put("variant", static_cast<std::size_t>(cfg.variant));
  put("pooling", static_cast<std::size_t>(cfg.pooling));
  put("input_dim", cfg.input_dim);
  put("lstm_units", cfg.lstm_units);
  put("heads", cfg.heads);
  put("head_dim", cfg.head_dim);
  put("num_classes", cfg.num_classes);
  Tensor<float> mlp({cfg.mlp_hidden.size()});
  for (std::size_t i = 0; i < cfg.mlp_hidden.size(); ++i) mlp[i] = static_cast<float>(cfg.mlp_hidden[i]);
  out.emplace("config.mlp_hidden", std::move(mlp));
  return out;
}

struct LoadedModel {
  DecoderConfig config;
  ModelParams<float> params;
};

inline LoadedModel model_from_entries(NamedTensors<float> entries) {
  auto take = [&](const std::string& key) {
    auto node = entries.extract("config." + key);
    if (!node) throw DataError("checkpoint lacks 'config." + key + "'");
    return std::move(node.mapped());
  };
  auto count = [&](const std::string& key) {
    const float v = take(key).item();
    if (!(v >= 0.0f) || v != static_cast<float>(static_cast<std::size_t>(v))) {
      throw DataError("checkpoint config '" + key + "' is not a count");
    }
    return static_cast<std::size_t>(v);
  };
  LoadedModel m;
  const auto variant = count("variant");
  const auto pooling = count("pooling");
  if (variant > 2 || pooling > 2) throw DataError("checkpoint config has unknown variant or pooling");
  m.config.variant = static_cast<Variant>(variant);
  m.config.pooling = static_cast<Pooling>(pooling);
  m.config.input_dim = count("input_dim");
  m.config.lstm_units = count("lstm_units");
  m.config.heads = count("heads");
  m.config.head_dim = count("head_dim");
  m.config.num_classes = count("num_classes");
  m.config.mlp_hidden.clear();
  const auto mlp = take("mlp_hidden");
  for (float v : mlp.data()) m.config.mlp_hidden.push_back(static_cast<std::size_t>(v));
  try {
    m.config.validate();
    check_params(m.config, entries);
  } catch (const ShapeError& e) {
    throw DataError(std::string("checkpoint does not match its config: ") + e.what());
  }
  m.params = std::move(entries);
  return m;
}

inline void save_model(const DecoderConfig& cfg, const ModelParams<float>& params, const std::filesystem::path& path) {
  write_checkpoint(model_entries(cfg, params), path);
}

inline LoadedModel load_model(const std::filesystem::path& path) { return model_from_entries(read_checkpoint(path)); }

}  // namespace asrsent
