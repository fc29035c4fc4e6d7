#pragma once

#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/nn.hpp"
#include "merlin/types.hpp"

namespace merlin::fusion {

using ad::Param;
using ad::Tape;
using ad::Var;

// Modality projection into the shared space: linear -> batch norm -> ReLU ->
// dropout (training only).
struct Projection {
  std::string prefix;
  nn::Linear lin;
  nn::BatchNorm bn;
  double dropout_rate = 0.2;

  Projection() = default;
  Projection(const std::string& name, std::size_t in_dim, std::size_t out_dim,
             std::uint64_t seed, double dropout = 0.2)
      : prefix(name),
        lin(name + ".lin", in_dim, out_dim, seed),
        bn(name + ".bn", out_dim),
        dropout_rate(dropout) {}

  std::size_t out_dim() const { return lin.bias.value.cols(); }

  Var apply(Tape& t, Var x, bool training, Rng& rng) {
    Var h = t.relu(bn.apply(t, lin.apply(t, x), training));
    return training ? t.dropout(h, dropout_rate, rng) : h;
  }

  void collect(std::vector<Param*>& out) {
    lin.collect(out);
    bn.collect(out);
  }

  void state(std::vector<std::pair<std::string, Matrix*>>& out) {
    out.emplace_back(prefix + ".bn.running_mean", &bn.running_mean);
    out.emplace_back(prefix + ".bn.running_var", &bn.running_var);
  }
};

// Shared scalar energy network plus the projection onto the fused space:
// ff_proj is linear -> ReLU -> batch norm -> dropout.
struct Fusion {
  std::string prefix;
  nn::Linear energy;    // d' -> 1, shared between modalities
  nn::Linear proj;      // 2*d' -> fused dim
  nn::BatchNorm proj_bn;
  double dropout_rate = 0.2;

  Fusion() = default;
  Fusion(const std::string& name, std::size_t d_prime, std::size_t fused_dim,
         std::uint64_t seed, double dropout = 0.2)
      : prefix(name),
        energy(name + ".energy", d_prime, 1, seed),
        proj(name + ".proj", 2 * d_prime, fused_dim, seed),
        proj_bn(name + ".proj_bn", fused_dim),
        dropout_rate(dropout) {}

  std::size_t fused_dim() const { return proj.bias.value.cols(); }

  Var apply_proj(Tape& t, Var cat, bool training, Rng& rng) {
    Var h = proj_bn.apply(t, t.relu(proj.apply(t, cat)), training);
    return training ? t.dropout(h, dropout_rate, rng) : h;
  }

  void collect(std::vector<Param*>& out) {
    energy.collect(out);
    proj.collect(out);
    proj_bn.collect(out);
  }

  void state(std::vector<std::pair<std::string, Matrix*>>& out) {
    out.emplace_back(prefix + ".proj_bn.running_mean", &proj_bn.running_mean);
    out.emplace_back(prefix + ".proj_bn.running_var", &proj_bn.running_var);
  }
};

struct FusionVars {
  Var fused;        // B x fused_dim
  Var alpha_image;  // B x 1
  Var alpha_text;   // B x 1
  Var ctx_image;    // B x d'
  Var ctx_text;     // B x d'
};

// Two-way softmax over the modality energies; contexts are the scaled latent
// vectors, concatenated image-then-text before the fused projection.
inline FusionVars attention_fuse(Tape& t, Fusion& f, Var h_text, Var h_image, bool training,
                                 Rng& rng) {
  Var e_image = f.energy.apply(t, h_image);
  Var e_text = f.energy.apply(t, h_text);
  Var alpha = t.softmax_rows(t.concat_cols(e_image, e_text));
  FusionVars out;
  out.alpha_image = t.slice_cols(alpha, 0, 1);
  out.alpha_text = t.slice_cols(alpha, 1, 2);
  out.ctx_image = t.mul_colvec(h_image, out.alpha_image);
  out.ctx_text = t.mul_colvec(h_text, out.alpha_text);
  Var cat = t.concat_cols(out.ctx_image, out.ctx_text);
  out.fused = f.apply_proj(t, cat, training, rng);
  return out;
}

// Attention-ablated variant: plain concatenation through the same projection.
inline Var concat_fuse(Tape& t, Fusion& f, Var h_text, Var h_image, bool training, Rng& rng) {
  return f.apply_proj(t, t.concat_cols(h_image, h_text), training, rng);
}

// Single-instance evaluation-mode result, mirroring the tape computation.
struct FusionOutput {
  Embedding fused;
  double alpha_image = 0.0;
  double alpha_text = 0.0;
  std::vector<double> ctx_image;
  std::vector<double> ctx_text;
};

inline Matrix row_from(const std::vector<double>& v) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
  return m;
}

inline std::vector<double> row_to_vec(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.cols());
}

inline FusionOutput attention_fuse_eval(Fusion& f, const std::vector<double>& h_text_prime,
                                        const std::vector<double>& h_image_prime) {
  Tape t;
  Rng rng(0);
  FusionVars vars = attention_fuse(t, f, t.input(row_from(h_text_prime)),
                                   t.input(row_from(h_image_prime)), false, rng);
  FusionOutput out;
  out.fused = Embedding(row_to_vec(t.value(vars.fused)), Modality::Fused);
  out.alpha_image = t.value(vars.alpha_image)(0, 0);
  out.alpha_text = t.value(vars.alpha_text)(0, 0);
  out.ctx_image = row_to_vec(t.value(vars.ctx_image));
  out.ctx_text = row_to_vec(t.value(vars.ctx_text));
  return out;
}

inline Embedding concat_fuse_eval(Fusion& f, const std::vector<double>& h_text_prime,
                                  const std::vector<double>& h_image_prime) {
  Tape t;
  Rng rng(0);
  Var fused = concat_fuse(t, f, t.input(row_from(h_text_prime)), t.input(row_from(h_image_prime)),
                          false, rng);
  return Embedding(row_to_vec(t.value(fused)), Modality::Fused);
}

// ---------------------------------------------------------------------------
// Classification head

struct ClassifierHead {
  nn::Linear lin;  // dim -> 3

  ClassifierHead() = default;
  ClassifierHead(const std::string& prefix, std::size_t dim, std::uint64_t seed)
      : lin(prefix + ".lin", dim, kNumClasses, seed) {}

  Var logits(Tape& t, Var x) { return lin.apply(t, x); }

  void collect(std::vector<Param*>& out) { lin.collect(out); }

  // Softmax probabilities for one embedding.
  std::vector<double> classify(const std::vector<double>& embedding) {
    Tape t;
    Var p = t.softmax_rows(logits(t, t.input(row_from(embedding))));
    return row_to_vec(t.value(p));
  }
};

// Argmax with ties broken toward the lower class index.
inline ClassLabel argmax_label(const std::vector<double>& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return static_cast<ClassLabel>(static_cast<int>(best));
}

// ---------------------------------------------------------------------------
// Cross-entropy over probability rows

struct CrossEntropyResult {
  double sum = 0.0;   // the reported quantity
  double mean = 0.0;  // per-instance average, used by the optimizer
  std::size_t clamped = 0;
};

inline CrossEntropyResult cross_entropy(const Matrix& probabilities,
                                        const std::vector<ClassLabel>& labels) {
  if (probabilities.rows() != labels.size())
    throw NumericError("cross_entropy: row/label count mismatch");
  CrossEntropyResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double p = probabilities(i, static_cast<std::size_t>(labels[i]));
    if (p < 1e-12) {
      p = 1e-12;
      ++r.clamped;
    }
    r.sum -= std::log(p);
  }
  r.mean = labels.empty() ? 0.0 : r.sum / static_cast<double>(labels.size());
  return r;
}

}  // namespace merlin::fusion
