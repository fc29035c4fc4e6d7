#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/corpus.hpp"
#include "merlin/errors.hpp"
#include "merlin/nn.hpp"
#include "merlin/types.hpp"

namespace merlin::enc {

using ad::Param;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Tokenization

constexpr int kPadId = 0;
constexpr int kClsId = 1;
constexpr int kUnkId = 2;
constexpr std::size_t kReservedTokens = 3;

// Lowercased words, punctuation stripped.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

struct Vocab {
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;  // index = id

  std::size_t size() const { return id_to_token.size(); }

  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }
};

// Keeps the (max_size - 3) most frequent words; ties go to the
// lexicographically smaller word. Reserved ids: 0=[PAD], 1=[CLS], 2=[UNK].
inline Vocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size) {
  if (max_size < kReservedTokens + 1) throw ConfigError("build_vocab: max_size must be >= 4");
  std::map<std::string, std::size_t> counts;
  for (const std::string& t : texts)
    for (const std::string& w : split_words(t)) ++counts[w];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.id_to_token = {"[PAD]", "[CLS]", "[UNK]"};
  std::size_t keep = std::min(ranked.size(), max_size - kReservedTokens);
  for (std::size_t i = 0; i < keep; ++i) v.id_to_token.push_back(ranked[i].first);
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

// Position 0 is always [CLS]; no padding is stored.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t length() const { return ids.size(); }
};

inline TokenSequence tokenize(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  for (const std::string& w : split_words(text)) {
    if (seq.ids.size() >= max_len) break;
    seq.ids.push_back(vocab.id_of(w));
  }
  (void)vocab;
  return seq;
}

// ---------------------------------------------------------------------------
// Patches

// Flattened non-overlapping patches in row-major patch order; pixel values
// scaled to [0,1], channel-interleaved within each patch.
struct PatchSequence {
  std::vector<std::vector<double>> patches;
  std::size_t patch_size = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

inline PatchSequence patchify(const corpus::Image& img, std::size_t patch_size) {
  if (patch_size == 0) throw ConfigError("patchify: patch size must be positive");
  if (img.height % patch_size != 0 || img.width % patch_size != 0)
    throw DataError("patchify: image " + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + " not divisible by patch size " +
                    std::to_string(patch_size));
  PatchSequence seq;
  seq.patch_size = patch_size;
  seq.grid_h = img.height / patch_size;
  seq.grid_w = img.width / patch_size;
  seq.patches.reserve(seq.grid_h * seq.grid_w);
  for (std::size_t py = 0; py < seq.grid_h; ++py) {
    for (std::size_t px = 0; px < seq.grid_w; ++px) {
      std::vector<double> flat;
      flat.reserve(patch_size * patch_size * 3);
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        std::size_t y = py * patch_size + dy;
        for (std::size_t dx = 0; dx < patch_size; ++dx) {
          std::size_t x = px * patch_size + dx;
          std::size_t off = (y * img.width + x) * 3;
          for (std::size_t c = 0; c < 3; ++c)
            flat.push_back(static_cast<double>(img.pixels[off + c]) / 255.0);
        }
      }
      seq.patches.push_back(std::move(flat));
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Transformer encoder

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_positions = 64;  // includes the [CLS] slot
  bool final_layer_norm = true;
  std::size_t vocab_size = 0;  // token input when > 0
  std::size_t patch_dim = 0;   // patch input when > 0

  std::size_t head_dim() const { return dim / heads; }
};

struct EncoderBlock {
  nn::LayerNorm ln_attn;
  nn::Linear wq, wk, wv, wo;
  nn::LayerNorm ln_ffn;
  nn::Linear ff1, ff2;

  EncoderBlock() = default;
  EncoderBlock(const std::string& prefix, const EncoderConfig& cfg, std::uint64_t seed)
      : ln_attn(prefix + ".ln_attn", cfg.dim),
        wq(prefix + ".wq", cfg.dim, cfg.dim, seed),
        wk(prefix + ".wk", cfg.dim, cfg.dim, seed),
        wv(prefix + ".wv", cfg.dim, cfg.dim, seed),
        wo(prefix + ".wo", cfg.dim, cfg.dim, seed),
        ln_ffn(prefix + ".ln_ffn", cfg.dim),
        ff1(prefix + ".ff1", cfg.dim, cfg.dim * cfg.ffn_mult, seed),
        ff2(prefix + ".ff2", cfg.dim * cfg.ffn_mult, cfg.dim, seed) {}

  void collect(std::vector<Param*>& out) {
    ln_attn.collect(out);
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
    ln_ffn.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

// Pre-norm Transformer encoder pooled at the [CLS] position. The same core
// serves texts (token-table input) and images (patch projection plus a
// learned [CLS] vector).
class TransformerEncoder {
 public:
  TransformerEncoder() = default;

  TransformerEncoder(const std::string& prefix, const EncoderConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), prefix_(prefix) {
    if (cfg.dim % cfg.heads != 0) throw ConfigError("encoder: dim must be divisible by heads");
    if ((cfg.vocab_size > 0) == (cfg.patch_dim > 0))
      throw ConfigError("encoder: exactly one of vocab_size/patch_dim must be set");
    if (cfg.vocab_size > 0) {
      token_table_ = nn::normal_table(prefix + ".token_table", cfg.vocab_size, cfg.dim, 0.02, seed);
    } else {
      patch_proj_ = nn::Linear(prefix + ".patch_proj", cfg.patch_dim, cfg.dim, seed);
      cls_embed_ = nn::normal_table(prefix + ".cls_embed", 1, cfg.dim, 0.02, seed);
    }
    pos_table_ = nn::normal_table(prefix + ".pos_table", cfg.max_positions, cfg.dim, 0.02, seed);
    for (std::size_t l = 0; l < cfg.layers; ++l)
      blocks_.emplace_back(prefix + ".block" + std::to_string(l), cfg, seed);
    if (cfg.final_layer_norm) ln_final_ = nn::LayerNorm(prefix + ".ln_final", cfg.dim);
  }

  const EncoderConfig& config() const { return cfg_; }

  void collect(std::vector<Param*>& out) {
    if (cfg_.vocab_size > 0) {
      out.push_back(&token_table_);
    } else {
      patch_proj_.collect(out);
      out.push_back(&cls_embed_);
    }
    out.push_back(&pos_table_);
    for (EncoderBlock& b : blocks_) b.collect(out);
    if (cfg_.final_layer_norm) ln_final_.collect(out);
  }

  // Pooled 1 x dim [CLS] output for a token sequence. pad_to > length()
  // appends [PAD] positions under an attention mask (the pooled output is
  // unchanged by construction).
  Var encode_tokens(Tape& t, const TokenSequence& seq, std::size_t pad_to = 0) {
    if (cfg_.vocab_size == 0) throw ConfigError("encode_tokens: not a token encoder");
    std::size_t real = seq.ids.size();
    std::size_t total = std::max(real, pad_to);
    check_positions(total);
    std::vector<std::size_t> rows;
    rows.reserve(total);
    for (int id : seq.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw DataError("encode_tokens: token id " + std::to_string(id) + " out of range");
      rows.push_back(static_cast<std::size_t>(id));
    }
    rows.resize(total, static_cast<std::size_t>(kPadId));
    Var x = t.gather_rows(t.leaf(token_table_), rows);
    return run_core(t, x, real, total);
  }

  // Pooled 1 x dim [CLS] output for a patch sequence.
  Var encode_patches(Tape& t, const PatchSequence& seq) {
    if (cfg_.patch_dim == 0) throw ConfigError("encode_patches: not a patch encoder");
    std::size_t total = seq.patches.size() + 1;
    check_positions(total);
    Matrix patches(seq.patches.size(), cfg_.patch_dim);
    for (std::size_t i = 0; i < seq.patches.size(); ++i) {
      if (seq.patches[i].size() != cfg_.patch_dim)
        throw DataError("encode_patches: patch dim mismatch");
      for (std::size_t j = 0; j < cfg_.patch_dim; ++j) patches(i, j) = seq.patches[i][j];
    }
    Var projected = patch_proj_.apply(t, t.input(std::move(patches)));
    Var x = t.concat_rows({t.leaf(cls_embed_), projected});
    return run_core(t, x, total, total);
  }

  // Evaluation-mode embeddings (pure function of weights and input).
  Embedding embed_text(const TokenSequence& seq) {
    Tape t;
    Var v = encode_tokens(t, seq);
    return to_embedding(t.value(v), Modality::Text);
  }

  Embedding embed_image(const PatchSequence& seq) {
    Tape t;
    Var v = encode_patches(t, seq);
    return to_embedding(t.value(v), Modality::Image);
  }

 private:
  void check_positions(std::size_t total) const {
    if (total > cfg_.max_positions)
      throw DataError("encoder: sequence length " + std::to_string(total) +
                      " exceeds max positions " + std::to_string(cfg_.max_positions));
  }

  static Embedding to_embedding(const Matrix& row, Modality m) {
    std::vector<double> v(row.data(), row.data() + row.cols());
    return Embedding(std::move(v), m);
  }

  Var run_core(Tape& t, Var x, std::size_t real_len, std::size_t total_len) {
    std::vector<std::size_t> positions(total_len);
    for (std::size_t i = 0; i < total_len; ++i) positions[i] = i;
    x = t.add(x, t.gather_rows(t.leaf(pos_table_), positions));

    // Additive key mask: padded positions never receive attention.
    Matrix mask(total_len, total_len);
    for (std::size_t i = 0; i < total_len; ++i)
      for (std::size_t j = real_len; j < total_len; ++j) mask(i, j) = -1e30;
    const Matrix* mask_ptr = real_len < total_len ? &mask : nullptr;

    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
    for (EncoderBlock& blk : blocks_) {
      Var h = blk.ln_attn.apply(t, x);
      Var q = blk.wq.apply(t, h);
      Var k = blk.wk.apply(t, h);
      Var v = blk.wv.apply(t, h);
      std::vector<Var> head_ctx;
      for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
        std::size_t c0 = hd * cfg_.head_dim(), c1 = c0 + cfg_.head_dim();
        Var qh = t.slice_cols(q, c0, c1);
        Var kh = t.slice_cols(k, c0, c1);
        Var vh = t.slice_cols(v, c0, c1);
        Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
        Var attn = t.softmax_rows(scores, mask_ptr);
        head_ctx.push_back(t.matmul(attn, vh));
      }
      Var ctx = head_ctx[0];
      for (std::size_t hd = 1; hd < head_ctx.size(); ++hd) ctx = t.concat_cols(ctx, head_ctx[hd]);
      x = t.add(x, blk.wo.apply(t, ctx));

      Var f = blk.ln_ffn.apply(t, x);
      f = blk.ff2.apply(t, t.gelu(blk.ff1.apply(t, f)));
      x = t.add(x, f);
    }
    if (cfg_.final_layer_norm) x = ln_final_.apply(t, x);
    return t.gather_rows(x, {0});
  }

  EncoderConfig cfg_;
  std::string prefix_;
  Param token_table_;
  nn::Linear patch_proj_;
  Param cls_embed_;
  Param pos_table_;
  std::vector<EncoderBlock> blocks_;
  nn::LayerNorm ln_final_;
};

}  // namespace merlin::enc
