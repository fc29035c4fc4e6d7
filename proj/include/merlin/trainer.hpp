#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/errors.hpp"
#include "merlin/io.hpp"
#include "merlin/metrics.hpp"
#include "merlin/rng.hpp"
#include "merlin/types.hpp"

namespace merlin::train {

using ad::Param;
using ad::Tape;
using ad::Var;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Throws on non-finite gradients, naming the
// offending tensor.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, AdamConfig cfg = {})
      : params_(std::move(params)), lr_(lr), cfg_(cfg) {
    for (Param* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      if (!p.grad.all_finite())
        throw NumericError("adam: non-finite gradient in tensor '" + p.name + "'");
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        double g = p.grad[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        p.value[j] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  long step_count() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
  double lr_;
  AdamConfig cfg_;
};

// ---------------------------------------------------------------------------
// Stage training

enum class Stage { Text, Image, Concat, Attention, Gat };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Text: return "text";
    case Stage::Image: return "image";
    case Stage::Concat: return "concat";
    case Stage::Attention: return "attention";
    case Stage::Gat: return "gat";
  }
  return "?";
}

inline Stage stage_from_name(const std::string& s) {
  if (s == "text") return Stage::Text;
  if (s == "image") return Stage::Image;
  if (s == "concat") return Stage::Concat;
  if (s == "attention") return Stage::Attention;
  if (s == "gat") return Stage::Gat;
  throw ConfigError("unknown stage '" + s + "'");
}

enum class EarlyStopMetric { WinRate, Accuracy };

struct TrainConfig {
  Stage stage = Stage::Text;
  double learning_rate = 1e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  EarlyStopMetric early_stop = EarlyStopMetric::WinRate;
  AdamConfig adam;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_wr = 0.0;  // 0 when no High was predicted
  double val_accuracy = 0.0;
};

struct Checkpoint {
  Stage stage = Stage::Text;
  std::map<std::string, Matrix> tensors;  // parameters and state buffers
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<EpochLog> log;
  bool degenerate_wr = false;  // no epoch ever predicted High
};

// What a trainable stage exposes to the loop. Instances are indexed; the
// model owns its data binding.
struct StageModel {
  virtual ~StageModel() = default;
  virtual void collect(std::vector<Param*>& out) = 0;
  virtual void state(std::vector<std::pair<std::string, Matrix*>>&) {}
  virtual std::size_t train_size() const = 0;
  // Mean training loss over the given instance indices, on the tape.
  virtual Var batch_loss(Tape& t, const std::vector<std::size_t>& idx, Rng& rng) = 0;
  // Validation predictions and truths, evaluation mode.
  virtual std::map<std::string, ClassLabel> val_predictions() = 0;
  virtual const std::map<std::string, ClassLabel>& val_truths() const = 0;
};

inline std::map<std::string, Matrix> snapshot_tensors(StageModel& model) {
  std::map<std::string, Matrix> snap;
  std::vector<Param*> params;
  model.collect(params);
  for (Param* p : params) snap[p->name] = p->value;
  std::vector<std::pair<std::string, Matrix*>> buffers;
  model.state(buffers);
  for (auto& [name, m] : buffers) snap[name] = *m;
  return snap;
}

inline void restore_tensors(StageModel& model, const std::map<std::string, Matrix>& snap) {
  std::vector<Param*> params;
  model.collect(params);
  for (Param* p : params) {
    auto it = snap.find(p->name);
    if (it == snap.end()) throw DataError("checkpoint: missing tensor '" + p->name + "'");
    if (!p->value.same_shape(it->second))
      throw DataError("checkpoint: shape mismatch for tensor '" + p->name + "'");
    p->value = it->second;
  }
  std::vector<std::pair<std::string, Matrix*>> buffers;
  model.state(buffers);
  for (auto& [name, m] : buffers) {
    auto it = snap.find(name);
    if (it == snap.end()) throw DataError("checkpoint: missing state buffer '" + name + "'");
    *m = it->second;
  }
}

struct ValScore {
  double wr = 0.0;
  double accuracy = 0.0;
  bool high_predicted = false;
};

inline ValScore score_validation(const std::map<std::string, ClassLabel>& preds,
                                 const std::map<std::string, ClassLabel>& truths) {
  auto cm = metrics::confusion(preds, truths);
  auto high = metrics::high_metrics(cm);
  ValScore s;
  s.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(cm.total());
  s.high_predicted = high.wr_defined;
  s.wr = high.wr_defined ? high.wr : 0.0;  // a model that never calls High earns no wins
  return s;
}

// Epoch loop with early stopping at the maximum validation metric (ties keep
// the earlier epoch). The returned checkpoint holds the best snapshot.
inline Checkpoint train_stage(StageModel& model, const TrainConfig& cfg,
                              std::uint64_t config_hash = 0) {
  cfg.validate();
  if (model.train_size() == 0) throw DataError("train_stage: empty training set");
  if (model.val_truths().empty()) throw DataError("train_stage: empty validation set");

  std::vector<Param*> params;
  model.collect(params);
  Adam adam(params, cfg.learning_rate, cfg.adam);

  Checkpoint best;
  best.stage = cfg.stage;
  best.config_hash = config_hash;
  best.seed = cfg.seed;
  double best_value = -1.0;
  bool any_high = false;

  std::vector<std::size_t> order(model.train_size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, hash64("shuffle") ^ epoch);
    shuffle(order, shuffle_rng);
    Rng dropout_rng(cfg.seed, hash64("dropout") ^ epoch);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      Tape tape;
      Var loss = model.batch_loss(tape, batch, dropout_rng);
      loss_sum += tape.value(loss)(0, 0);
      ++n_batches;
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }

    ValScore score = score_validation(model.val_predictions(), model.val_truths());
    any_high = any_high || score.high_predicted;

    EpochLog log_entry;
    log_entry.epoch = epoch;
    log_entry.train_loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
    log_entry.val_wr = score.wr;
    log_entry.val_accuracy = score.accuracy;
    best.log.push_back(log_entry);

    double value = cfg.early_stop == EarlyStopMetric::WinRate ? score.wr : score.accuracy;
    if (value > best_value) {
      best_value = value;
      best.best_epoch = epoch;
      best.best_metric = value;
      best.tensors = snapshot_tensors(model);
    }
  }
  best.degenerate_wr = cfg.early_stop == EarlyStopMetric::WinRate && !any_high;
  restore_tensors(model, best.tensors);
  return best;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient audit

// Central differences at 64-bit against the analytic gradients of
// loss_fn. The callable must be a deterministic pure function of the
// parameter values.
inline double finite_diff_audit(std::vector<Param*> params,
                                const std::function<double()>& loss_fn,
                                const std::function<void()>& compute_grads, double epsilon) {
  for (Param* p : params) p->zero_grad();
  compute_grads();
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      double saved = p.value[j];
      p.value[j] = saved + epsilon;
      double up = loss_fn();
      p.value[j] = saved - epsilon;
      double down = loss_fn();
      p.value[j] = saved;
      double fd = (up - down) / (2.0 * epsilon);
      double ga = analytic[pi][j];
      double rel = std::abs(ga - fd) / std::max({1.0, std::abs(ga), std::abs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint file ("MRCK"): magic, u32 version, u64 config hash, u64 seed,
// u8 stage, u32 best epoch, f64 best metric, u32 tensor count, then per
// tensor: u16 name length, name, u32 rank, u32 dims, f32 LE data.

constexpr char kCheckpointMagic[4] = {'M', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::string b;
  b.append(kCheckpointMagic, 4);
  io::put_u32(b, kCheckpointVersion);
  io::put_u64(b, ck.config_hash);
  io::put_u64(b, ck.seed);
  io::put_u8(b, static_cast<std::uint8_t>(ck.stage));
  io::put_u32(b, static_cast<std::uint32_t>(ck.best_epoch));
  io::put_f64(b, ck.best_metric);
  io::put_u32(b, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    io::put_u16(b, static_cast<std::uint16_t>(name.size()));
    b += name;
    io::put_u32(b, 2);
    io::put_u32(b, static_cast<std::uint32_t>(m.rows()));
    io::put_u32(b, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) io::put_f32(b, static_cast<float>(m[i]));
  }
  io::atomic_write_file(path, b);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  io::Reader r(bytes, path.string());
  if (r.str(4) != std::string(kCheckpointMagic, 4))
    throw DataError(path.string() + ": bad magic");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_hash = r.u64();
  ck.seed = r.u64();
  std::uint8_t stage = r.u8();
  if (stage > 4) throw DataError(path.string() + ": bad stage tag");
  ck.stage = static_cast<Stage>(stage);
  ck.best_epoch = r.u32();
  ck.best_metric = r.f64();
  std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str(r.u16());
    std::uint32_t rank = r.u32();
    if (rank != 2) throw DataError(path.string() + ": unsupported tensor rank");
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    Matrix m(rows, cols);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] = static_cast<double>(r.f32());
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  return ck;
}

// Run log CSV: epoch, train_loss, val_wr, val_accuracy.
inline std::string run_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_wr,val_accuracy\n";
  char line[160];
  for (const EpochLog& e : log) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_wr,
                  e.val_accuracy);
    out += line;
  }
  return out;
}

}  // namespace merlin::train
