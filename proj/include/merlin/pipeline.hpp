#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "merlin/baselines.hpp"
#include "merlin/config.hpp"
#include "merlin/corpus.hpp"
#include "merlin/encoders.hpp"
#include "merlin/ensemble.hpp"
#include "merlin/fusion.hpp"
#include "merlin/metrics.hpp"
#include "merlin/mrle.hpp"
#include "merlin/stage2.hpp"
#include "merlin/trainer.hpp"

namespace merlin::cli {

// ---------------------------------------------------------------------------
// Data binding

struct DataBundle {
  std::vector<corpus::NftRecord> records;  // secondary-filtered, label-joined
  corpus::LabelFile label_file;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::map<std::string, ClassLabel> train_truths;
  std::map<std::string, ClassLabel> val_truths;

  ClassLabel label_of(std::size_t i) const { return label_file.labels.at(records[i].id); }
};

inline DataBundle load_bundle(const PipelineConfig& cfg) {
  DataBundle b;
  b.records = corpus::filter_secondary(corpus::load_dataset(cfg.dataset), cfg.min_sales);
  b.label_file = corpus::load_label_file(cfg.labels);
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    const std::string& id = b.records[i].id;
    auto lit = b.label_file.labels.find(id);
    auto sit = b.label_file.split.find(id);
    if (lit == b.label_file.labels.end() || sit == b.label_file.split.end())
      throw DataError("bundle: record '" + id + "' missing from label file");
    if (sit->second == corpus::Split::Train) {
      b.train_idx.push_back(i);
      b.train_truths[id] = lit->second;
    } else {
      b.val_idx.push_back(i);
      b.val_truths[id] = lit->second;
    }
  }
  if (b.train_idx.empty()) throw DataError("bundle: empty training split");
  if (b.val_idx.empty()) throw DataError("bundle: empty validation split");
  return b;
}

// ---------------------------------------------------------------------------
// Unimodal stages

class TextStage final : public train::StageModel {
 public:
  TextStage(const PipelineConfig& cfg, const DataBundle& data, std::uint64_t seed)
      : data_(&data) {
    max_len_ = cfg.encoder.max_text_len;
    std::vector<std::string> train_texts;
    for (std::size_t i : data.train_idx) train_texts.push_back(data.records[i].text);
    vocab_ = enc::build_vocab(train_texts, cfg.encoder.vocab_size);

    enc::EncoderConfig ec;
    ec.dim = cfg.dims.text;
    ec.layers = cfg.encoder.layers;
    ec.heads = cfg.encoder.heads;
    ec.ffn_mult = cfg.encoder.ffn_mult;
    ec.max_positions = cfg.encoder.max_text_len;
    ec.final_layer_norm = cfg.encoder.final_layer_norm;
    ec.vocab_size = vocab_.size();
    encoder_ = enc::TransformerEncoder("text_encoder", ec, seed);
    head_ = fusion::ClassifierHead("text_head", cfg.dims.text, seed);

    tokens_.reserve(data.records.size());
    for (const corpus::NftRecord& r : data.records)
      tokens_.push_back(enc::tokenize(r.text, vocab_, cfg.encoder.max_text_len));
  }

  void collect(std::vector<ad::Param*>& out) override {
    encoder_.collect(out);
    head_.collect(out);
  }

  std::size_t train_size() const override { return data_->train_idx.size(); }

  ad::Var batch_loss(ad::Tape& t, const std::vector<std::size_t>& idx, Rng&) override {
    std::vector<ad::Var> pooled;
    std::vector<int> targets;
    pooled.reserve(idx.size());
    for (std::size_t local : idx) {
      std::size_t i = data_->train_idx[local];
      pooled.push_back(encoder_.encode_tokens(t, tokens_[i]));
      targets.push_back(static_cast<int>(data_->label_of(i)));
    }
    ad::Var lp = t.log_softmax_rows(head_.logits(t, t.concat_rows(pooled)));
    return t.scale(t.nll_sum(lp, targets), 1.0 / static_cast<double>(idx.size()));
  }

  std::map<std::string, std::vector<double>> probabilities(const std::vector<std::size_t>& which) {
    std::map<std::string, std::vector<double>> out;
    for (std::size_t start = 0; start < which.size(); start += 64) {
      std::size_t end = std::min(start + 64, which.size());
      ad::Tape t;
      std::vector<ad::Var> pooled;
      for (std::size_t c = start; c < end; ++c)
        pooled.push_back(encoder_.encode_tokens(t, tokens_[which[c]]));
      ad::Var probs = t.softmax_rows(head_.logits(t, t.concat_rows(pooled)));
      const Matrix& p = t.value(probs);
      for (std::size_t c = start; c < end; ++c) {
        std::vector<double> row(p.data() + (c - start) * 3, p.data() + (c - start) * 3 + 3);
        out[data_->records[which[c]].id] = std::move(row);
      }
    }
    return out;
  }

  std::map<std::string, ClassLabel> val_predictions() override {
    std::map<std::string, ClassLabel> preds;
    for (auto& [id, probs] : probabilities(data_->val_idx))
      preds[id] = fusion::argmax_label(probs);
    return preds;
  }

  const std::map<std::string, ClassLabel>& val_truths() const override {
    return data_->val_truths;
  }

  // Evaluation-mode embeddings for every record, keyed by id.
  std::map<std::string, Embedding> embeddings_all() {
    std::map<std::string, Embedding> out;
    for (std::size_t i = 0; i < data_->records.size(); ++i)
      out[data_->records[i].id] = encoder_.embed_text(tokens_[i]);
    return out;
  }

  // Probabilities for an explicit word list; words equal to
  // analysis::kMaskedWord (or any out-of-vocabulary word) map to [UNK].
  std::vector<double> probs_for_words(const std::vector<std::string>& words) {
    enc::TokenSequence seq;
    seq.ids.push_back(enc::kClsId);
    for (const std::string& w : words) {
      if (seq.ids.size() >= max_len_) break;
      seq.ids.push_back(vocab_.id_of(w));
    }
    return head_.classify(encoder_.embed_text(seq).values);
  }

  const enc::Vocab& vocab() const { return vocab_; }
  enc::TransformerEncoder& encoder() { return encoder_; }
  fusion::ClassifierHead& head() { return head_; }

 private:
  const DataBundle* data_;
  enc::Vocab vocab_;
  enc::TransformerEncoder encoder_;
  fusion::ClassifierHead head_;
  std::vector<enc::TokenSequence> tokens_;
  std::size_t max_len_ = 0;
};

class ImageStage final : public train::StageModel {
 public:
  ImageStage(const PipelineConfig& cfg, const DataBundle& data, std::uint64_t seed)
      : data_(&data) {
    patch_size_ = cfg.encoder.patch_size;
    patches_.reserve(data.records.size());
    std::size_t max_patches = 1;
    for (const corpus::NftRecord& r : data.records) {
      patches_.push_back(enc::patchify(r.image, cfg.encoder.patch_size));
      max_patches = std::max(max_patches, patches_.back().patches.size());
    }
    enc::EncoderConfig ec;
    ec.dim = cfg.dims.image;
    ec.layers = cfg.encoder.layers;
    ec.heads = cfg.encoder.heads;
    ec.ffn_mult = cfg.encoder.ffn_mult;
    ec.max_positions = max_patches + 1;
    ec.final_layer_norm = cfg.encoder.final_layer_norm;
    ec.patch_dim = cfg.encoder.patch_size * cfg.encoder.patch_size * 3;
    encoder_ = enc::TransformerEncoder("image_encoder", ec, seed);
    head_ = fusion::ClassifierHead("image_head", cfg.dims.image, seed);
  }

  void collect(std::vector<ad::Param*>& out) override {
    encoder_.collect(out);
    head_.collect(out);
  }

  std::size_t train_size() const override { return data_->train_idx.size(); }

  ad::Var batch_loss(ad::Tape& t, const std::vector<std::size_t>& idx, Rng&) override {
    std::vector<ad::Var> pooled;
    std::vector<int> targets;
    for (std::size_t local : idx) {
      std::size_t i = data_->train_idx[local];
      pooled.push_back(encoder_.encode_patches(t, patches_[i]));
      targets.push_back(static_cast<int>(data_->label_of(i)));
    }
    ad::Var lp = t.log_softmax_rows(head_.logits(t, t.concat_rows(pooled)));
    return t.scale(t.nll_sum(lp, targets), 1.0 / static_cast<double>(idx.size()));
  }

  std::map<std::string, std::vector<double>> probabilities(const std::vector<std::size_t>& which) {
    std::map<std::string, std::vector<double>> out;
    for (std::size_t start = 0; start < which.size(); start += 64) {
      std::size_t end = std::min(start + 64, which.size());
      ad::Tape t;
      std::vector<ad::Var> pooled;
      for (std::size_t c = start; c < end; ++c)
        pooled.push_back(encoder_.encode_patches(t, patches_[which[c]]));
      ad::Var probs = t.softmax_rows(head_.logits(t, t.concat_rows(pooled)));
      const Matrix& p = t.value(probs);
      for (std::size_t c = start; c < end; ++c) {
        std::vector<double> row(p.data() + (c - start) * 3, p.data() + (c - start) * 3 + 3);
        out[data_->records[which[c]].id] = std::move(row);
      }
    }
    return out;
  }

  std::map<std::string, ClassLabel> val_predictions() override {
    std::map<std::string, ClassLabel> preds;
    for (auto& [id, probs] : probabilities(data_->val_idx))
      preds[id] = fusion::argmax_label(probs);
    return preds;
  }

  const std::map<std::string, ClassLabel>& val_truths() const override {
    return data_->val_truths;
  }

  std::map<std::string, Embedding> embeddings_all() {
    std::map<std::string, Embedding> out;
    for (std::size_t i = 0; i < data_->records.size(); ++i)
      out[data_->records[i].id] = encoder_.embed_image(patches_[i]);
    return out;
  }

  std::vector<double> probs_for_image(const corpus::Image& img) {
    enc::PatchSequence seq = enc::patchify(img, patch_size_);
    return head_.classify(encoder_.embed_image(seq).values);
  }

  std::size_t patch_size() const { return patch_size_; }
  enc::TransformerEncoder& encoder() { return encoder_; }
  fusion::ClassifierHead& head() { return head_; }

 private:
  const DataBundle* data_;
  enc::TransformerEncoder encoder_;
  fusion::ClassifierHead head_;
  std::vector<enc::PatchSequence> patches_;
  std::size_t patch_size_ = 0;
};

// ---------------------------------------------------------------------------
// Fusion stage (attention or plain concatenation) over frozen embeddings

class FusionStage final : public train::StageModel {
 public:
  FusionStage(const PipelineConfig& cfg, const DataBundle& data,
              const std::map<std::string, Embedding>& text_emb,
              const std::map<std::string, Embedding>& image_emb, bool use_attention,
              std::uint64_t seed)
      : data_(&data), use_attention_(use_attention) {
    std::size_t d_text = text_emb.begin()->second.dim();
    std::size_t d_image = image_emb.begin()->second.dim();
    text_all_ = Matrix(data.records.size(), d_text);
    image_all_ = Matrix(data.records.size(), d_image);
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      const std::string& id = data.records[i].id;
      auto te = text_emb.find(id);
      auto ie = image_emb.find(id);
      if (te == text_emb.end()) throw DataError("fusion: missing text embedding for '" + id + "'");
      if (ie == image_emb.end())
        throw DataError("fusion: missing image embedding for '" + id + "'");
      if (te->second.dim() != d_text || ie->second.dim() != d_image)
        throw DataError("fusion: inconsistent embedding dims at '" + id + "'");
      for (std::size_t j = 0; j < d_text; ++j) text_all_(i, j) = te->second.values[j];
      for (std::size_t j = 0; j < d_image; ++j) image_all_(i, j) = ie->second.values[j];
    }
    std::string prefix = use_attention ? "attention" : "concat";
    proj_text_ = fusion::Projection(prefix + ".proj_text", d_text, cfg.dims.proj, seed,
                                    cfg.dropout.projection);
    proj_image_ = fusion::Projection(prefix + ".proj_image", d_image, cfg.dims.proj, seed,
                                     cfg.dropout.projection);
    fusion_ = fusion::Fusion(prefix + ".fusion", cfg.dims.proj, cfg.dims.fused, seed,
                             cfg.dropout.fusion);
    head_ = fusion::ClassifierHead(prefix + ".head", cfg.dims.fused, seed);
  }

  void collect(std::vector<ad::Param*>& out) override {
    proj_text_.collect(out);
    proj_image_.collect(out);
    fusion_.collect(out);
    head_.collect(out);
  }

  void state(std::vector<std::pair<std::string, Matrix*>>& out) override {
    proj_text_.state(out);
    proj_image_.state(out);
    fusion_.state(out);
  }

  std::size_t train_size() const override { return data_->train_idx.size(); }

  ad::Var batch_loss(ad::Tape& t, const std::vector<std::size_t>& idx, Rng& rng) override {
    std::vector<int> targets;
    targets.reserve(idx.size());
    std::vector<std::size_t> rows;
    rows.reserve(idx.size());
    for (std::size_t local : idx) {
      std::size_t i = data_->train_idx[local];
      rows.push_back(i);
      targets.push_back(static_cast<int>(data_->label_of(i)));
    }
    ad::Var fused = forward(t, rows, true, rng);
    ad::Var lp = t.log_softmax_rows(head_.logits(t, fused));
    return t.scale(t.nll_sum(lp, targets), 1.0 / static_cast<double>(idx.size()));
  }

  std::map<std::string, std::vector<double>> probabilities(const std::vector<std::size_t>& which) {
    ad::Tape t;
    Rng rng(0);
    ad::Var fused = forward(t, which, false, rng);
    ad::Var probs = t.softmax_rows(head_.logits(t, fused));
    const Matrix& p = t.value(probs);
    std::map<std::string, std::vector<double>> out;
    for (std::size_t c = 0; c < which.size(); ++c) {
      std::vector<double> row(p.data() + c * 3, p.data() + c * 3 + 3);
      out[data_->records[which[c]].id] = std::move(row);
    }
    return out;
  }

  std::map<std::string, ClassLabel> val_predictions() override {
    std::map<std::string, ClassLabel> preds;
    for (auto& [id, probs] : probabilities(data_->val_idx))
      preds[id] = fusion::argmax_label(probs);
    return preds;
  }

  const std::map<std::string, ClassLabel>& val_truths() const override {
    return data_->val_truths;
  }

  // Evaluation-mode fused embeddings for every record.
  std::map<std::string, Embedding> fused_all() {
    std::vector<std::size_t> all(data_->records.size());
    std::iota(all.begin(), all.end(), 0);
    ad::Tape t;
    Rng rng(0);
    ad::Var fused = forward(t, all, false, rng);
    const Matrix& f = t.value(fused);
    std::map<std::string, Embedding> out;
    for (std::size_t i = 0; i < all.size(); ++i) {
      std::vector<double> v(f.data() + i * f.cols(), f.data() + (i + 1) * f.cols());
      out[data_->records[i].id] = Embedding(std::move(v), Modality::Fused);
    }
    return out;
  }

  // Per-instance attention weights (alpha_image, alpha_text), eval mode.
  std::map<std::string, std::pair<double, double>> attention_weights(
      const std::vector<std::size_t>& which) {
    if (!use_attention_) throw ConfigError("attention weights unavailable for concat fusion");
    ad::Tape t;
    Rng rng(0);
    ad::Var h_text = proj_text_.apply(t, gather(t, text_all_, which), false, rng);
    ad::Var h_image = proj_image_.apply(t, gather(t, image_all_, which), false, rng);
    fusion::FusionVars vars = fusion::attention_fuse(t, fusion_, h_text, h_image, false, rng);
    std::map<std::string, std::pair<double, double>> out;
    for (std::size_t c = 0; c < which.size(); ++c)
      out[data_->records[which[c]].id] = {t.value(vars.alpha_image)(c, 0),
                                          t.value(vars.alpha_text)(c, 0)};
    return out;
  }

  fusion::Fusion& fusion_module() { return fusion_; }
  fusion::ClassifierHead& head() { return head_; }

 private:
  static ad::Var gather(ad::Tape& t, const Matrix& all, const std::vector<std::size_t>& rows) {
    Matrix m(rows.size(), all.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < all.cols(); ++j) m(r, j) = all(rows[r], j);
    return t.input(std::move(m));
  }

  ad::Var forward(ad::Tape& t, const std::vector<std::size_t>& rows, bool training, Rng& rng) {
    ad::Var h_text = proj_text_.apply(t, gather(t, text_all_, rows), training, rng);
    ad::Var h_image = proj_image_.apply(t, gather(t, image_all_, rows), training, rng);
    if (use_attention_)
      return fusion::attention_fuse(t, fusion_, h_text, h_image, training, rng).fused;
    return fusion::concat_fuse(t, fusion_, h_text, h_image, training, rng);
  }

  const DataBundle* data_;
  bool use_attention_;
  Matrix text_all_;
  Matrix image_all_;
  fusion::Projection proj_text_, proj_image_;
  fusion::Fusion fusion_;
  fusion::ClassifierHead head_;
};

// ---------------------------------------------------------------------------
// GAT stage over the similarity graphs

// k capped to node count - 1 so small validation graphs stay constructible.
inline graph::SimilarityGraph build_graph_capped(std::vector<graph::GroupNode> nodes,
                                                 std::size_t k) {
  if (nodes.size() < 2) throw DataError("graph: need at least 2 nodes");
  std::size_t k_eff = std::min(k, nodes.size() - 1);
  return graph::build_knn_graph(std::move(nodes), k_eff);
}

class GatStage final : public train::StageModel {
 public:
  GatStage(const PipelineConfig& cfg, const DataBundle& data,
           const std::map<std::string, Embedding>& fused, std::uint64_t seed)
      : data_(&data) {
    std::vector<const corpus::NftRecord*> train_recs, val_recs;
    for (std::size_t i : data.train_idx) train_recs.push_back(&data.records[i]);
    for (std::size_t i : data.val_idx) val_recs.push_back(&data.records[i]);
    train_graph_ = build_graph_capped(
        graph::partition_by_price(train_recs, data.label_file.labels, fused, cfg.graph.l),
        cfg.graph.k);
    val_graph_ = build_graph_capped(
        graph::partition_by_price(val_recs, data.label_file.labels, fused, cfg.graph.l),
        cfg.graph.k);
    x_train_ = graph::node_feature_matrix(train_graph_);
    for (const graph::GroupNode& n : train_graph_.nodes)
      train_targets_.push_back(static_cast<int>(n.label));
    net_ = graph::GatNetwork("gat", x_train_.cols(), cfg.graph.gat_hidden, cfg.graph.gat_heads,
                             cfg.graph.gat_dropout, seed);
  }

  void collect(std::vector<ad::Param*>& out) override { net_.collect(out); }

  // Full-graph gradient steps; the whole graph is one batch.
  std::size_t train_size() const override { return 1; }

  ad::Var batch_loss(ad::Tape& t, const std::vector<std::size_t>&, Rng& rng) override {
    ad::Var x = t.input(x_train_);
    auto f = net_.forward(t, train_graph_, x, true, rng);
    return t.scale(t.nll_sum(f.log_probs, train_targets_),
                   1.0 / static_cast<double>(train_targets_.size()));
  }

  std::vector<ClassLabel> node_predictions(const graph::SimilarityGraph& g) {
    graph::GatPrediction p = graph::gat_predict(net_, g);
    std::vector<ClassLabel> preds;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
      preds.push_back(graph::row_argmax(p.probabilities, i));
    return preds;
  }

  std::map<std::string, std::vector<double>> probabilities_val() {
    graph::GatPrediction p = graph::gat_predict(net_, val_graph_);
    std::map<std::string, std::vector<double>> out;
    for (std::size_t i = 0; i < val_graph_.nodes.size(); ++i) {
      std::vector<double> row = {p.probabilities(i, 0), p.probabilities(i, 1),
                                 p.probabilities(i, 2)};
      for (const std::string& id : val_graph_.nodes[i].members) out[id] = row;
    }
    return out;
  }

  std::map<std::string, ClassLabel> val_predictions() override {
    return graph::predict_members(val_graph_, node_predictions(val_graph_));
  }

  const std::map<std::string, ClassLabel>& val_truths() const override {
    return data_->val_truths;
  }

  const graph::SimilarityGraph& train_graph() const { return train_graph_; }
  const graph::SimilarityGraph& val_graph() const { return val_graph_; }
  graph::GatNetwork& network() { return net_; }

 private:
  const DataBundle* data_;
  graph::SimilarityGraph train_graph_, val_graph_;
  Matrix x_train_;
  std::vector<int> train_targets_;
  graph::GatNetwork net_;
};

// ---------------------------------------------------------------------------
// Checkpoint plumbing

inline std::filesystem::path out_path(const PipelineConfig& cfg, const std::string& name) {
  return std::filesystem::path(cfg.out_dir) / name;
}

inline void save_stage(const PipelineConfig& cfg, const train::Checkpoint& ck) {
  std::string stage = train::stage_name(ck.stage);
  train::save_checkpoint(out_path(cfg, stage + ".mrck"), ck);
  io::atomic_write_file(out_path(cfg, stage + "_log.csv"), train::run_log_csv(ck.log));
  nlohmann::json prov;
  prov["config_hash"] = ck.config_hash;
  prov["seed"] = ck.seed;
  io::atomic_write_file(out_path(cfg, stage + "_log.csv.prov.json"), prov.dump(2) + "\n");
}

inline train::Checkpoint load_stage(const PipelineConfig& cfg, train::Stage stage,
                                    train::StageModel& model) {
  auto path = out_path(cfg, std::string(train::stage_name(stage)) + ".mrck");
  if (!std::filesystem::exists(path))
    throw DataError("missing checkpoint '" + path.string() + "'; run the train stage first");
  train::Checkpoint ck = train::load_checkpoint(path);
  if (ck.stage != stage) throw DataError(path.string() + ": stage tag mismatch");
  train::restore_tensors(model, ck.tensors);
  return ck;
}

// ---------------------------------------------------------------------------
// Embedding sources (built-in encoders or external MRLE adapters)

inline std::map<std::string, Embedding> validated_external(const std::filesystem::path& path,
                                                           Modality expected,
                                                           const DataBundle& data) {
  mrle::EmbeddingFile f = mrle::read_embeddings(path);
  if (f.modality != expected)
    throw DataError(path.string() + ": expected modality " +
                    std::string(modality_name(expected)));
  for (const corpus::NftRecord& r : data.records)
    if (!f.embeddings.count(r.id))
      throw DataError(path.string() + ": no embedding for record '" + r.id + "'");
  return f.embeddings;
}

inline std::map<std::string, Embedding> text_embeddings(const PipelineConfig& cfg,
                                                        const DataBundle& data) {
  if (!cfg.external.text.empty())
    return validated_external(cfg.external.text, Modality::Text, data);
  TextStage stage(cfg, data, cfg.seed);
  load_stage(cfg, train::Stage::Text, stage);
  return stage.embeddings_all();
}

inline std::map<std::string, Embedding> image_embeddings(const PipelineConfig& cfg,
                                                         const DataBundle& data) {
  if (!cfg.external.image.empty())
    return validated_external(cfg.external.image, Modality::Image, data);
  ImageStage stage(cfg, data, cfg.seed);
  load_stage(cfg, train::Stage::Image, stage);
  return stage.embeddings_all();
}

inline std::map<std::string, Embedding> fused_embeddings(const PipelineConfig& cfg,
                                                         const DataBundle& data,
                                                         bool use_attention) {
  auto text = text_embeddings(cfg, data);
  auto image = image_embeddings(cfg, data);
  FusionStage stage(cfg, data, text, image, use_attention, cfg.seed);
  load_stage(cfg, use_attention ? train::Stage::Attention : train::Stage::Concat, stage);
  return stage.fused_all();
}

}  // namespace merlin::cli
