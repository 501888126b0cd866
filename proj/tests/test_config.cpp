#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "asrsent/config.hpp"
#include "asrsent/model_io.hpp"

using namespace asrsent;

namespace {

std::filesystem::path write_tmp(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / ("asrsent_cfg_" + name);
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(Config, DefaultsMatchLibraryDefaults) {
  const RunConfig cfg;
  const auto j = config_json(cfg);
  EXPECT_EQ(j["model"]["variant"], "rnn_attn");
  EXPECT_EQ(j["model"]["heads"], 8);
  EXPECT_EQ(j["model"]["head_dim"], 32);
  EXPECT_EQ(j["model"]["lstm_units"], 64);
  EXPECT_DOUBLE_EQ(j["train"]["lr"].get<double>(), 1e-4);
  EXPECT_DOUBLE_EQ(j["train"]["clip_norm"].get<double>(), 4.0);
  EXPECT_EQ(j["augment"]["warp_W"], 80);
  EXPECT_EQ(j["augment"]["freq_F"], 27);
  EXPECT_EQ(j["augment"]["time_T"], 100);
  EXPECT_EQ(j["frontend"]["mel_bins"], 80);
  EXPECT_EQ(j["encoder"]["projection_dim"], 1536);
  EXPECT_EQ(j["synth"]["priors"], "uniform");
}

TEST(Config, FileThenOverrides) {
  const auto path = write_tmp("a.ini",
                              "[model]\nvariant = mlp_pool\nmlp_hidden = 32, 16\n\n[train]\nlr = 0.001\nmax_steps = 10\n"
                              "[synth]\npriors = swbd\n[augment]\nenabled = false\n");
  const auto cfg = load_run_config(path, {"train.max_steps=20", "model.pooling=max"});
  EXPECT_EQ(cfg.model.variant, Variant::mlp_pool);
  EXPECT_EQ(cfg.model.pooling, Pooling::max);
  EXPECT_EQ(cfg.model.mlp_hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_DOUBLE_EQ(cfg.train.lr, 1e-3);
  EXPECT_EQ(cfg.train.max_steps, 20u);
  EXPECT_EQ(cfg.synth.priors, SynthConfig::swbd_priors());
  EXPECT_FALSE(cfg.train.augment.enabled);
}

TEST(Config, IniRoundTrip) {
  RunConfig cfg;
  cfg.model.variant = Variant::rnn_pool;
  cfg.model.pooling = Pooling::last;
  cfg.train.seed = 77;
  cfg.train.augment.time_p = 0.25;
  cfg.synth.priors = {0.2, 0.3, 0.5};
  cfg.frontend.normalize = true;
  const auto path = write_tmp("rt.ini", config_ini(cfg));
  const auto back = load_run_config(path, {});
  EXPECT_EQ(config_json(back), config_json(cfg));
}

TEST(Config, Errors) {
  RunConfig cfg;
  EXPECT_THROW(apply_override(cfg, "model.nope=1"), DataError);
  EXPECT_THROW(apply_override(cfg, "train.batch_size=abc"), DataError);
  EXPECT_THROW(apply_override(cfg, "train.batch_size=-3"), DataError);
  EXPECT_THROW(apply_override(cfg, "model.variant=transformer"), DataError);
  EXPECT_THROW(apply_override(cfg, "novalue"), DataError);
  EXPECT_THROW(apply_override(cfg, "augment.enabled=maybe"), DataError);
  EXPECT_THROW(load_run_config(write_tmp("bad.ini", "[model\nvariant=x\n"), {}), DataError);
  EXPECT_THROW(load_run_config(std::filesystem::path("/nonexistent/cfg.ini"), {}), DataError);
}

TEST(ModelIo, CheckpointCarriesConfig) {
  DecoderConfig cfg;
  cfg.variant = Variant::mlp_pool;
  cfg.pooling = Pooling::max;
  cfg.input_dim = 5;
  cfg.mlp_hidden = {7, 3};
  cfg.num_classes = 4;
  const auto params = init_params<float>(cfg, 3);
  const auto path = std::filesystem::temp_directory_path() / "asrsent_model.sntc";
  save_model(cfg, params, path);
  const auto loaded = load_model(path);
  EXPECT_EQ(loaded.config, cfg);
  EXPECT_EQ(loaded.params, params);
  auto entries = model_entries(cfg, params);
  entries.erase("mlp.1.b");
  EXPECT_THROW(model_from_entries(entries), DataError);
}
