// asrsent: synth / train / eval / predict / viz / gradcheck

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asrsent/ablation.hpp"
#include "asrsent/config.hpp"
#include "asrsent/encoder.hpp"
#include "asrsent/gradcheck.hpp"
#include "asrsent/metrics.hpp"
#include "asrsent/model_io.hpp"
#include "asrsent/synth.hpp"
#include "asrsent/train.hpp"
#include "asrsent/visualize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace asrsent;

namespace {

constexpr double kGradTolerance = 1e-4;

struct Common {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::string out = ".";
  std::vector<std::string> argv;
};

RunConfig resolve(const Common& c) {
  return load_run_config(c.config ? std::optional<fs::path>(*c.config) : std::nullopt, c.sets);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

/// Every run leaves a run.json with the resolved config and its results.
void write_run_json(const Common& c, const std::string& command, const RunConfig& cfg, json results) {
  json j;
  j["command"] = command;
  j["argv"] = c.argv;
  j["config"] = config_json(cfg);
  j["results"] = std::move(results);
  write_text(fs::path(c.out) / "run.json", j.dump(2) + "\n");
}

json config_of(const DecoderConfig& d) {
  return {{"variant", to_string(d.variant)}, {"pooling", to_string(d.pooling)}, {"input_dim", d.input_dim},
          {"lstm_units", d.lstm_units}, {"heads", d.heads}, {"head_dim", d.head_dim},
          {"mlp_hidden", d.mlp_hidden}, {"num_classes", d.num_classes}};
}

/// Frozen encoder applied to manifest features when augmentation runs before it.
struct Frontend {
  std::optional<EncoderParams> encoder;
  EncoderConfig cfg;

  explicit Frontend(const RunConfig& rc) : cfg(rc.encoder) {
    if (rc.augment_stage == "encoder") encoder = init_encoder(cfg, rc.encoder_seed);
  }
  SentimentExample operator()(const SentimentExample& ex) const {
    return encoder ? encode_example(ex, *encoder, cfg) : ex;
  }
  std::vector<SentimentExample> all(std::vector<SentimentExample> v) const {
    if (encoder) {
      for (auto& ex : v) ex = (*this)(ex);
    }
    return v;
  }
  std::size_t output_dim(std::size_t raw) const { return encoder ? cfg.output_dim() : raw; }
};

Corpus load_manifest(const std::string& path) {
  const auto m = read_manifest(path);
  return load_corpus(m);
}

json metrics_json(const ConfusionMatrix& cm) { return MetricsReport::from(cm, true).to_json(); }

void print_metrics(const ConfusionMatrix& cm) {
  const auto report = MetricsReport::from(cm, true);
  std::printf("WA %s UA %s\n", format_pct(report.wa).c_str(), format_pct(report.ua).c_str());
}

std::function<void(const LogRow&)> progress(std::string prefix) {
  return [prefix](const LogRow& r) { std::fprintf(stderr, "%s%s\n", prefix.c_str(), csv_row(r).c_str()); };
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::uint64_t seed) {
  auto cfg = resolve(c);
  if (cfg.synth_test_examples >= cfg.synth.num_examples) {
    throw DataError("synth.test_examples must be smaller than synth.num_examples");
  }
  auto corpus = generate(cfg.synth, seed);
  if (cfg.synth_through_encoder) {
    if (cfg.augment_stage == "encoder") throw DataError("synth.through_encoder conflicts with augment.stage=encoder");
    if (cfg.synth.dim != cfg.encoder.input_dim) throw DataError("synth.dim must equal encoder.input_dim to run through the encoder");
    corpus = encode_corpus(corpus, init_encoder(cfg.encoder, cfg.encoder_seed), cfg.encoder);
  }
  const std::size_t n_train = corpus.examples.size() - cfg.synth_test_examples;
  Corpus train{{corpus.examples.begin(), corpus.examples.begin() + n_train}, corpus.class_names};
  Corpus test{{corpus.examples.begin() + n_train, corpus.examples.end()}, corpus.class_names};
  const fs::path out(c.out);
  const auto train_m = write_corpus(train, out / "train");
  const auto test_m = write_corpus(test, out / "test");
  std::printf("%s\n%s\n", train_m.string().c_str(), test_m.string().c_str());
  write_run_json(c, "synth", cfg,
                 {{"seed", seed}, {"train_manifest", train_m.string()}, {"test_manifest", test_m.string()},
                  {"train_examples", train.examples.size()}, {"test_examples", test.examples.size()},
                  {"classes", corpus.class_names}});
  return 0;
}

int cmd_train(const Common& c, const std::string& manifest, const std::optional<std::string>& test_manifest) {
  auto cfg = resolve(c);
  const Frontend frontend(cfg);
  const auto corpus = load_manifest(manifest);
  auto& model = cfg.model;
  model.num_classes = corpus.class_names.size();
  model.input_dim = frontend.output_dim(corpus.examples.front().features.dim());

  const auto [tr_idx, ho_idx] = split_holdout(corpus.examples.size(), cfg.train.holdout_fraction, cfg.train.seed);
  const auto train_set = select(corpus.examples, tr_idx);
  const auto holdout = frontend.all(select(corpus.examples, ho_idx));
  InputTransform transform;
  if (frontend.encoder) transform = [&frontend](const SentimentExample& ex) { return frontend(ex); };

  fs::create_directories(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_at_precision(model, train_set, holdout, cfg.train, progress(""), transform);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(c.out);
  save_model(model, res.best, out / "model.ckpt");
  write_log_csv(res.log, out / "log.csv");
  json results{{"checkpoint", (out / "model.ckpt").string()}, {"log", (out / "log.csv").string()},
               {"model", config_of(model)}, {"classes", corpus.class_names},
               {"train_examples", train_set.size()}, {"holdout_examples", holdout.size()},
               {"steps", res.steps}, {"best_step", res.best_step}, {"best_holdout_wa", res.best_wa},
               {"seconds", secs}};
  std::printf("best holdout WA %s at step %zu\n", format_pct(res.best_wa).c_str(), res.best_step);
  if (test_manifest) {
    const auto test = frontend.all(load_manifest(*test_manifest).examples);
    const auto ev = evaluate(model, res.best, test, cfg.train.eval_batch_size);
    std::printf("test ");
    print_metrics(ev.confusion);
    results["test"] = metrics_json(ev.confusion);
  }
  write_run_json(c, "train", cfg, std::move(results));
  return 0;
}

ConfusionMatrix split_run(const DecoderConfig& d, const TrainConfig& tc, std::span<const SentimentExample> pool,
                          std::span<const SentimentExample> test, const std::string& name) {
  const auto [tr, ho] = split_holdout(pool.size(), tc.holdout_fraction, tc.seed);
  const auto res = train_at_precision(d, select(pool, tr), select(pool, ho), tc, progress(name + ","));
  return evaluate(d, res.best, test, tc.eval_batch_size).confusion;
}

ConfusionMatrix loso_run(const DecoderConfig& d, const TrainConfig& tc, std::span<const SentimentExample> corpus,
                         std::size_t folds, const std::string& name, json* detail = nullptr) {
  auto log = [name](std::size_t fold, const LogRow& r) {
    std::fprintf(stderr, "%sfold%zu,%s\n", name.c_str(), fold, csv_row(r).c_str());
  };
  const auto cv = tc.precision == "float64" ? loso_cv<double>(d, corpus, tc, folds, log) : loso_cv<float>(d, corpus, tc, folds, log);
  if (detail) {
    auto arr = json::array();
    for (const auto& f : cv.folds) {
      arr.push_back({{"test_speakers", f.test_speakers}, {"test_examples", f.test_indices.size()},
                     {"best_step", f.best_step}, {"wa", wa(f.confusion)}, {"ua", ua(f.confusion, false)}});
    }
    (*detail)["folds"] = arr;
    (*detail)["mean_wa"] = cv.mean_wa;
    (*detail)["mean_ua"] = cv.mean_ua;
  }
  return cv.pooled;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& manifest, bool loso, bool ablation,
             const std::optional<std::string>& test_manifest, std::size_t folds) {
  auto cfg = resolve(c);
  const Frontend frontend(cfg);
  const auto loaded = load_model(checkpoint);
  const auto& model = loaded.config;
  const auto corpus = load_manifest(manifest);
  if (corpus.class_names.size() != model.num_classes) {
    throw DataError("manifest has " + std::to_string(corpus.class_names.size()) + " classes, checkpoint expects " +
                    std::to_string(model.num_classes));
  }
  if ((loso || ablation) && frontend.encoder) throw DataError("--loso/--ablation need decoder-stage augmentation");
  json results{{"checkpoint", checkpoint}, {"manifest", manifest}, {"model", config_of(model)}};

  if (ablation) {
    std::vector<SentimentExample> pool = corpus.examples, test;
    std::string protocol;
    if (test_manifest) {
      test = load_manifest(*test_manifest).examples;
      protocol = "test manifest";
    } else if (!loso) {
      // no separate test set: hold out a fixed 20% of the manifest
      const auto [tr, te] = split_holdout(pool.size(), 0.2, derive_seed(cfg.train.seed, 0x7E57));
      test = select(corpus.examples, te);
      pool = select(corpus.examples, tr);
      protocol = "80/20 split";
    } else {
      protocol = "leave-one-speaker-out";
    }
    const auto rows = run_ablation(model, cfg.train, [&](const DecoderConfig& d, const TrainConfig& tc) {
      const std::string name = to_string(d.variant) + (tc.augment.enabled ? "+aug," : "-aug,");
      return test.empty() ? loso_run(d, tc, pool, folds, name) : split_run(d, tc, pool, test, name);
    });
    std::printf("ablation (%s)\n%s", protocol.c_str(), ablation_table(rows).c_str());
    auto arr = json::array();
    for (const auto& r : rows) arr.push_back({{"description", r.setting.name}, {"wa", r.wa}, {"ua", r.ua}});
    results["ablation"] = {{"protocol", protocol}, {"rows", arr}};
  } else if (loso) {
    json detail;
    const auto pooled = loso_run(model, cfg.train, corpus.examples, folds, "", &detail);
    for (const auto& f : detail["folds"]) {
      std::printf("fold speakers %s WA %s UA %s\n", f["test_speakers"].dump().c_str(),
                  format_pct(f["wa"].get<double>()).c_str(), format_pct(f["ua"].get<double>()).c_str());
    }
    std::printf("pooled ");
    print_metrics(pooled);
    detail["pooled"] = metrics_json(pooled);
    results["loso"] = detail;
  } else {
    const auto examples = frontend.all(corpus.examples);
    const auto ev = evaluate(model, loaded.params, examples, cfg.train.eval_batch_size);
    print_metrics(ev.confusion);
    results["metrics"] = metrics_json(ev.confusion);
    results["loss"] = ev.loss;
  }
  write_run_json(c, "eval", cfg, std::move(results));
  return 0;
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& features,
                const std::optional<std::string>& manifest) {
  auto cfg = resolve(c);
  const Frontend frontend(cfg);
  const auto loaded = load_model(checkpoint);
  auto names = manifest ? read_manifest(*manifest).class_names : default_class_names(loaded.config.num_classes);
  if (names.size() != loaded.config.num_classes) throw DataError("class names do not match the checkpoint");
  SentimentExample ex;
  ex.features = read_features(features);
  ex = frontend(ex);
  const auto pred = predict(loaded.config, loaded.params, ex.features);
  const int cls = pred.argmax(0);
  std::vector<double> probs;
  for (std::size_t k = 0; k < pred.probs.cols(); ++k) probs.push_back(pred.probs.at(0, k));
  const json out{{"class", cls}, {"label", names[static_cast<std::size_t>(cls)]}, {"classes", names},
                 {"probabilities", probs}};
  std::printf("%s\n", out.dump().c_str());
  write_run_json(c, "predict", cfg, {{"checkpoint", checkpoint}, {"features", features}, {"prediction", out}});
  return 0;
}

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& manifest, std::size_t index,
            const std::string& format_name, std::optional<std::size_t> head) {
  auto cfg = resolve(c);
  const Frontend frontend(cfg);
  const auto format = parse_render_format(format_name);
  const auto loaded = load_model(checkpoint);
  if (loaded.config.variant != Variant::rnn_attn) throw DataError("viz needs an rnn_attn checkpoint");
  if (head && *head >= loaded.config.heads) throw DataError("--head out of range");
  const auto m = read_manifest(manifest);
  if (index >= m.records.size()) {
    throw DataError("--index " + std::to_string(index) + " out of range (" + std::to_string(m.records.size()) + " records)");
  }
  const auto ex = frontend(load_example(m.records[index]));
  if (ex.alignment.empty()) throw DataError("manifest record " + std::to_string(index) + " has no word alignment");
  const auto pred = predict(loaded.config, loaded.params, ex.features);
  const auto map = pred.attention_map(0, ex.features.frame_period);
  const auto weights = word_attention(map, ex.alignment, head);
  const auto bins = quantize_bins(weights);
  std::vector<std::string> words;
  for (const auto& w : ex.alignment) words.push_back(w.token);
  const auto text = render(words, bins, format);
  const int cls = pred.argmax(0);
  json results{{"checkpoint", checkpoint}, {"manifest", manifest}, {"index", index}, {"format", format_name},
               {"predicted", m.class_names.at(static_cast<std::size_t>(cls))},
               {"label", m.class_names.at(static_cast<std::size_t>(ex.label))}, {"word_weights", weights}, {"bins", bins}};
  if (format == RenderFormat::html) {
    const auto path = fs::path(c.out) / ("attention_" + std::to_string(index) + ".html");
    write_text(path, html_page(text, "utterance " + std::to_string(index)));
    std::printf("%s\n", path.string().c_str());
    results["html"] = path.string();
  } else {
    std::fputs(text.c_str(), stdout);
  }
  write_run_json(c, "viz", cfg, std::move(results));
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& variant, std::uint64_t seed, std::size_t coords,
                  const std::string& pooling) {
  auto cfg = resolve(c);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = gradcheck_decoder(parse_variant(variant), seed, coords, parse_pooling(pooling));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.max_rel_error <= kGradTolerance;
  std::printf("%s max relative error %.3e over %zu coordinates (worst %s)\n", variant.c_str(), r.max_rel_error,
              r.coords, r.worst.c_str());
  write_run_json(c, "gradcheck", cfg,
                 {{"variant", variant}, {"pooling", pooling}, {"seed", seed}, {"coords", r.coords},
                  {"max_rel_error", r.max_rel_error}, {"worst", r.worst}, {"tolerance", kGradTolerance},
                  {"passed", ok}, {"seconds", secs}});
  if (!ok) {
    std::fprintf(stderr, "gradient check failed: %.3e > %.0e\n", r.max_rel_error, kGradTolerance);
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech sentiment decoders on frozen ASR encoder features"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  common.argv.assign(argv, argv + argc);
  app.add_option("--config", common.config, "INI config file");
  app.add_option("--set", common.sets, "override, section.key=value (repeatable)");
  app.add_option("--out", common.out, "output directory (run.json and artifacts)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus (train/ and test/ manifests)");
  std::uint64_t synth_seed = 0;
  synth->add_option("--seed", synth_seed, "corpus seed");

  auto* train = app.add_subcommand("train", "train a decoder on a manifest");
  std::string manifest, checkpoint;
  std::optional<std::string> test_manifest;
  train->add_option("--manifest", manifest, "training manifest")->required();
  train->add_option("--test-manifest", test_manifest, "score the best checkpoint on this manifest");

  auto* eval = app.add_subcommand("eval", "score a checkpoint, run LOSO cross validation or the ablation");
  bool loso = false, ablation = false;
  std::size_t folds = 0;
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--manifest", manifest, "manifest")->required();
  eval->add_flag("--loso", loso, "leave-one-speaker-out cross validation (retrains per fold)");
  eval->add_flag("--ablation", ablation, "train and score the decoder/augmentation ablation");
  eval->add_option("--test-manifest", test_manifest, "held-out test set for --ablation");
  eval->add_option("--folds", folds, "speaker groups for --loso (0 = one per speaker)");

  auto* pred = app.add_subcommand("predict", "classify one feature file");
  std::string features;
  std::optional<std::string> class_manifest;
  pred->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  pred->add_option("--features", features, "ASRF feature file")->required();
  pred->add_option("--manifest", class_manifest, "manifest to take class names from");

  auto* viz = app.add_subcommand("viz", "render word-level attention for one manifest entry");
  std::size_t index = 0;
  std::string format = "html";
  std::optional<std::size_t> head;
  viz->add_option("--checkpoint", checkpoint, "rnn_attn checkpoint")->required();
  viz->add_option("--manifest", manifest, "manifest")->required();
  viz->add_option("--index", index, "record index")->required();
  viz->add_option("--format", format, "html or ansi")->check(CLI::IsMember({"html", "ansi"}));
  viz->add_option("--head", head, "single attention head (default: mean over heads)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a decoder's gradients");
  std::string variant, pooling = "mean";
  std::uint64_t gc_seed = 0;
  std::size_t coords = 200;
  gc->add_option("--variant", variant, "mlp_pool, rnn_pool or rnn_attn")
      ->required()
      ->check(CLI::IsMember({"mlp_pool", "rnn_pool", "rnn_attn"}));
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--coords", coords, "coordinates to check")->check(CLI::Range(1, 1000000));
  gc->add_option("--pooling", pooling, "pooling for the pooling decoders")->check(CLI::IsMember({"mean", "max", "last"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cmd_synth(common, synth_seed);
    if (*train) return cmd_train(common, manifest, test_manifest);
    if (*eval) return cmd_eval(common, checkpoint, manifest, loso, ablation, test_manifest, folds);
    if (*pred) return cmd_predict(common, checkpoint, features, class_manifest);
    if (*viz) return cmd_viz(common, checkpoint, manifest, index, format, head);
    if (*gc) return cmd_gradcheck(common, variant, gc_seed, coords, pooling);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
