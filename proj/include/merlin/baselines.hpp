#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/corpus.hpp"
#include "merlin/encoders.hpp"
#include "merlin/errors.hpp"
#include "merlin/nn.hpp"
#include "merlin/trainer.hpp"
#include "merlin/types.hpp"

namespace merlin::baselines {

using ad::Var;

// ---------------------------------------------------------------------------
// ZeroR: the most frequent training class, ties toward the lower index.

inline ClassLabel zero_r(const std::vector<ClassLabel>& train_labels) {
  if (train_labels.empty()) throw DataError("zero_r: empty training labels");
  std::array<std::size_t, 3> counts{};
  for (ClassLabel l : train_labels) ++counts[static_cast<std::size_t>(l)];
  std::size_t best = 0;
  for (std::size_t c = 1; c < counts.size(); ++c)
    if (counts[c] > counts[best]) best = c;
  return static_cast<ClassLabel>(static_cast<int>(best));
}

// ---------------------------------------------------------------------------
// Prior: i.i.d. draws from the empirical training distribution.

class PriorPredictor {
 public:
  PriorPredictor(const std::vector<ClassLabel>& train_labels, std::uint64_t seed)
      : rng_(seed, hash64("prior")) {
    if (train_labels.empty()) throw DataError("prior: empty training labels");
    std::array<double, 3> counts{};
    for (ClassLabel l : train_labels) counts[static_cast<std::size_t>(l)] += 1.0;
    double total = counts[0] + counts[1] + counts[2];
    for (int c = 0; c < 3; ++c) shares_[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] / total;
  }

  ClassLabel next() {
    double u = rng_.next_double();
    if (u < shares_[0]) return ClassLabel::Low;
    if (u < shares_[0] + shares_[1]) return ClassLabel::Mid;
    return ClassLabel::High;
  }

  const std::array<double, 3>& shares() const { return shares_; }

 private:
  std::array<double, 3> shares_{};
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Hand-crafted features: collection price stats (population std) plus top-25
// term indicators. 29 values total.

constexpr std::size_t kTopTerms = 25;
constexpr std::size_t kFeatureDim = 4 + kTopTerms;

struct PriceStats {
  double min = 0.0, max = 0.0, avg = 0.0, std = 0.0;
};

inline PriceStats price_stats(const std::vector<double>& prices) {
  if (prices.empty()) throw DataError("price_stats: empty price set");
  PriceStats s;
  s.min = *std::min_element(prices.begin(), prices.end());
  s.max = *std::max_element(prices.begin(), prices.end());
  s.avg = std::accumulate(prices.begin(), prices.end(), 0.0) /
          static_cast<double>(prices.size());
  double var = 0.0;
  for (double p : prices) var += (p - s.avg) * (p - s.avg);
  s.std = std::sqrt(var / static_cast<double>(prices.size()));
  return s;
}

struct FeatureContext {
  std::map<std::string, PriceStats> by_collection;
  PriceStats global;
  std::vector<std::string> top_terms;  // <= 25
};

// Built from training records only, so no validation text or prices leak
// into the features.
inline FeatureContext build_feature_context(const std::vector<const corpus::NftRecord*>& train) {
  if (train.empty()) throw DataError("build_feature_context: empty training set");
  std::map<std::string, std::vector<double>> coll_prices;
  std::vector<double> all_prices;
  std::map<std::string, std::size_t> term_counts;
  for (const corpus::NftRecord* r : train) {
    for (double p : r->prices) all_prices.push_back(p);
    if (r->collection)
      for (double p : r->prices) coll_prices[*r->collection].push_back(p);
    for (const std::string& w : enc::split_words(r->text)) ++term_counts[w];
  }
  FeatureContext ctx;
  ctx.global = price_stats(all_prices);
  for (auto& [name, prices] : coll_prices) ctx.by_collection[name] = price_stats(prices);

  std::vector<std::pair<std::string, std::size_t>> ranked(term_counts.begin(), term_counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < std::min(ranked.size(), kTopTerms); ++i)
    ctx.top_terms.push_back(ranked[i].first);
  return ctx;
}

struct HandcraftedFeatures {
  std::vector<double> values;  // 29
  bool used_global_stats = false;
};

inline HandcraftedFeatures extract_features(const corpus::NftRecord& record,
                                            const FeatureContext& ctx) {
  HandcraftedFeatures f;
  f.values.assign(kFeatureDim, 0.0);
  const PriceStats* stats = &ctx.global;
  f.used_global_stats = true;
  if (record.collection) {
    auto it = ctx.by_collection.find(*record.collection);
    if (it != ctx.by_collection.end()) {
      stats = &it->second;
      f.used_global_stats = false;
    }
  }
  f.values[0] = stats->min;
  f.values[1] = stats->max;
  f.values[2] = stats->avg;
  f.values[3] = stats->std;

  std::set<std::string> words;
  for (const std::string& w : enc::split_words(record.text)) words.insert(w);
  for (std::size_t i = 0; i < ctx.top_terms.size(); ++i)
    if (words.count(ctx.top_terms[i])) f.values[4 + i] = 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression over standardized features.

struct LogisticConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  train::AdamConfig adam;
};

struct LogisticModel {
  nn::Linear lin;       // dim -> 3
  Matrix feature_mean;  // 1 x dim
  Matrix feature_std;   // 1 x dim

  LogisticModel() = default;
  LogisticModel(std::size_t dim, std::uint64_t seed)
      : lin("logistic.lin", dim, kNumClasses, seed),
        feature_mean(1, dim),
        feature_std(1, dim, 1.0) {}

  Matrix standardize(const Matrix& x) const {
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        out(i, j) = (x(i, j) - feature_mean(0, j)) / feature_std(0, j);
    return out;
  }

  // Log-probability rows for raw (unstandardized) features.
  Var log_probs(ad::Tape& t, const Matrix& raw_features) {
    return t.log_softmax_rows(lin.apply(t, t.input(standardize(raw_features))));
  }

  Matrix predict_probs(const Matrix& raw_features) {
    ad::Tape t;
    const Matrix& lp = t.value(log_probs(t, raw_features));
    Matrix p(lp.rows(), lp.cols());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp[i]);
    return p;
  }

  void collect(std::vector<ad::Param*>& out) { lin.collect(out); }
};

// Standardization statistics come from the training matrix alone.
inline void fit_standardization(LogisticModel& model, const Matrix& train_features) {
  std::size_t R = train_features.rows(), C = train_features.cols();
  if (R == 0) throw DataError("logistic: empty training set");
  for (std::size_t j = 0; j < C; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < R; ++i) mu += train_features(i, j);
    mu /= static_cast<double>(R);
    double var = 0.0;
    for (std::size_t i = 0; i < R; ++i)
      var += (train_features(i, j) - mu) * (train_features(i, j) - mu);
    var /= static_cast<double>(R);
    model.feature_mean(0, j) = mu;
    model.feature_std(0, j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

inline LogisticModel logistic_train(const Matrix& features, const std::vector<ClassLabel>& labels,
                                    const LogisticConfig& cfg) {
  if (features.rows() != labels.size()) throw DataError("logistic: feature/label count mismatch");
  LogisticModel model(features.cols(), cfg.seed);
  fit_standardization(model, features);

  std::vector<ad::Param*> params;
  model.collect(params);
  train::Adam adam(params, cfg.learning_rate, cfg.adam);

  std::vector<std::size_t> order(features.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, hash64("logistic.shuffle") ^ epoch);
    shuffle(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      Matrix batch(end - start, features.cols());
      std::vector<int> targets(end - start);
      for (std::size_t i = start; i < end; ++i) {
        for (std::size_t j = 0; j < features.cols(); ++j)
          batch(i - start, j) = features(order[i], j);
        targets[i - start] = static_cast<int>(labels[order[i]]);
      }
      ad::Tape t;
      Var lp = model.log_probs(t, batch);
      Var loss = t.scale(t.nll_sum(lp, targets), 1.0 / static_cast<double>(end - start));
      adam.zero_grad();
      t.backward(loss);
      adam.step();
    }
  }
  return model;
}

}  // namespace merlin::baselines
