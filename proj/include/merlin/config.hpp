#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "merlin/ensemble.hpp"
#include "merlin/errors.hpp"
#include "merlin/rng.hpp"
#include "merlin/synthetic.hpp"
#include "merlin/trainer.hpp"

namespace merlin::cli {

// Pipeline configuration, a single JSON document. Every field has a default;
// CLI flags override file values.
struct PipelineConfig {
  std::string dataset = "out/dataset.jsonl";
  std::string labels = "out/labels.jsonl";
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double split_ratio = 0.9;
  std::size_t min_sales = 2;

  struct Dims {
    std::size_t text = 64;   // d^(T)
    std::size_t image = 64;  // d^(I)
    std::size_t proj = 32;   // d'
    std::size_t fused = 32;  // d^(A)
  } dims;

  struct Encoder {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t max_text_len = 24;  // tokens incl. [CLS]
    std::size_t patch_size = 8;
    std::size_t vocab_size = 512;
    bool final_layer_norm = true;
  } encoder;

  struct Graph {
    std::size_t l = 50;
    std::size_t k = 10;
    std::size_t gat_hidden = 16;  // per head
    std::size_t gat_heads = 4;
    double gat_dropout = 0.5;
  } graph;

  struct Train {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t gat_epochs = 10;
    std::string early_stop = "win_rate";  // or "accuracy"
    train::AdamConfig adam;
    double lr_text = 1e-5;
    double lr_image = 1e-5;
    double lr_concat = 1e-5;
    double lr_attention = 1e-5;
    double lr_attention_for_gat = 1e-4;
    double lr_gat = 1e-3;
  } train;

  struct DropoutCfg {
    double projection = 0.2;
    double fusion = 0.2;
  } dropout;

  ensemble::PriorityPolicy ensemble_policy;

  struct External {
    std::string text;   // MRLE file replacing the built-in text encoder
    std::string image;  // MRLE file replacing the built-in image encoder
  } external;

  synth::SyntheticConfig synthetic;

  double stage_lr(train::Stage stage, bool for_gat = false) const {
    switch (stage) {
      case train::Stage::Text: return train.lr_text;
      case train::Stage::Image: return train.lr_image;
      case train::Stage::Concat: return train.lr_concat;
      case train::Stage::Attention: return for_gat ? train.lr_attention_for_gat : train.lr_attention;
      case train::Stage::Gat: return train.lr_gat;
    }
    return train.lr_text;
  }

  train::TrainConfig stage_train_config(train::Stage stage, bool for_gat = false) const {
    train::TrainConfig tc;
    tc.stage = stage;
    tc.learning_rate = stage_lr(stage, for_gat);
    tc.epochs = stage == train::Stage::Gat ? train.gat_epochs : train.epochs;
    tc.batch_size = train.batch_size;
    tc.seed = seed;
    tc.early_stop = train.early_stop == "accuracy" ? train::EarlyStopMetric::Accuracy
                                                   : train::EarlyStopMetric::WinRate;
    tc.adam = train.adam;
    return tc;
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["labels"] = c.labels;
  j["out"] = c.out_dir;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["split"]["ratio"] = c.split_ratio;
  j["min_sales"] = c.min_sales;
  j["dims"] = {{"text", c.dims.text},
               {"image", c.dims.image},
               {"proj", c.dims.proj},
               {"fused", c.dims.fused}};
  j["encoder"] = {{"layers", c.encoder.layers},
                  {"heads", c.encoder.heads},
                  {"ffn_mult", c.encoder.ffn_mult},
                  {"max_text_len", c.encoder.max_text_len},
                  {"patch_size", c.encoder.patch_size},
                  {"vocab_size", c.encoder.vocab_size},
                  {"final_layer_norm", c.encoder.final_layer_norm}};
  j["graph"] = {{"l", c.graph.l},
                {"k", c.graph.k},
                {"gat_hidden", c.graph.gat_hidden},
                {"gat_heads", c.graph.gat_heads},
                {"gat_dropout", c.graph.gat_dropout}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"gat_epochs", c.train.gat_epochs},
                {"early_stop", c.train.early_stop},
                {"adam",
                 {{"beta1", c.train.adam.beta1},
                  {"beta2", c.train.adam.beta2},
                  {"eps", c.train.adam.eps}}},
                {"lr",
                 {{"text", c.train.lr_text},
                  {"image", c.train.lr_image},
                  {"concat", c.train.lr_concat},
                  {"attention", c.train.lr_attention},
                  {"attention_for_gat", c.train.lr_attention_for_gat},
                  {"gat", c.train.lr_gat}}}};
  j["dropout"] = {{"projection", c.dropout.projection}, {"fusion", c.dropout.fusion}};
  j["ensemble"] = {{"order", c.ensemble_policy.order},
                   {"trigger", label_name(c.ensemble_policy.trigger)}};
  j["external"] = {{"text", c.external.text}, {"image", c.external.image}};
  j["synthetic"] = {{"count", c.synthetic.count},
                    {"image_size", c.synthetic.image_size},
                    {"text_words", c.synthetic.text_words},
                    {"mode", synth::signal_mode_name(c.synthetic.mode)},
                    {"signal_strength", c.synthetic.signal_strength},
                    {"collections", c.synthetic.collections}};
  return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.labels = j.value("labels", c.labels);
    c.out_dir = j.value("out", c.out_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("split")) c.split_ratio = j.at("split").value("ratio", c.split_ratio);
    c.min_sales = j.value("min_sales", c.min_sales);
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      c.dims.text = d.value("text", c.dims.text);
      c.dims.image = d.value("image", c.dims.image);
      c.dims.proj = d.value("proj", c.dims.proj);
      c.dims.fused = d.value("fused", c.dims.fused);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder.layers = e.value("layers", c.encoder.layers);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.ffn_mult = e.value("ffn_mult", c.encoder.ffn_mult);
      c.encoder.max_text_len = e.value("max_text_len", c.encoder.max_text_len);
      c.encoder.patch_size = e.value("patch_size", c.encoder.patch_size);
      c.encoder.vocab_size = e.value("vocab_size", c.encoder.vocab_size);
      c.encoder.final_layer_norm = e.value("final_layer_norm", c.encoder.final_layer_norm);
    }
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      c.graph.l = g.value("l", c.graph.l);
      c.graph.k = g.value("k", c.graph.k);
      c.graph.gat_hidden = g.value("gat_hidden", c.graph.gat_hidden);
      c.graph.gat_heads = g.value("gat_heads", c.graph.gat_heads);
      c.graph.gat_dropout = g.value("gat_dropout", c.graph.gat_dropout);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.gat_epochs = t.value("gat_epochs", c.train.gat_epochs);
      c.train.early_stop = t.value("early_stop", c.train.early_stop);
      if (t.contains("adam")) {
        const auto& a = t.at("adam");
        c.train.adam.beta1 = a.value("beta1", c.train.adam.beta1);
        c.train.adam.beta2 = a.value("beta2", c.train.adam.beta2);
        c.train.adam.eps = a.value("eps", c.train.adam.eps);
      }
      if (t.contains("lr")) {
        const auto& l = t.at("lr");
        c.train.lr_text = l.value("text", c.train.lr_text);
        c.train.lr_image = l.value("image", c.train.lr_image);
        c.train.lr_concat = l.value("concat", c.train.lr_concat);
        c.train.lr_attention = l.value("attention", c.train.lr_attention);
        c.train.lr_attention_for_gat = l.value("attention_for_gat", c.train.lr_attention_for_gat);
        c.train.lr_gat = l.value("gat", c.train.lr_gat);
      }
    }
    if (j.contains("dropout")) {
      const auto& d = j.at("dropout");
      c.dropout.projection = d.value("projection", c.dropout.projection);
      c.dropout.fusion = d.value("fusion", c.dropout.fusion);
    }
    if (j.contains("ensemble")) {
      const auto& e = j.at("ensemble");
      if (e.contains("order"))
        c.ensemble_policy.order = e.at("order").get<std::vector<std::string>>();
      if (e.contains("trigger"))
        c.ensemble_policy.trigger = label_from_name(e.at("trigger").get<std::string>());
    }
    if (j.contains("external")) {
      c.external.text = j.at("external").value("text", std::string());
      c.external.image = j.at("external").value("image", std::string());
    }
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      c.synthetic.count = s.value("count", c.synthetic.count);
      c.synthetic.image_size = s.value("image_size", c.synthetic.image_size);
      c.synthetic.text_words = s.value("text_words", c.synthetic.text_words);
      if (s.contains("mode"))
        c.synthetic.mode = synth::signal_mode_from_name(s.at("mode").get<std::string>());
      c.synthetic.signal_strength = s.value("signal_strength", c.synthetic.signal_strength);
      c.synthetic.collections = s.value("collections", c.synthetic.collections);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.synthetic.seed = c.seed;
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: invalid JSON in " + path.string());
  return config_from_json(j);
}

// Hash of the canonical config dump; embedded in every artifact.
inline std::uint64_t config_hash(const PipelineConfig& c) {
  return hash64(config_to_json(c).dump());
}

}  // namespace merlin::cli
