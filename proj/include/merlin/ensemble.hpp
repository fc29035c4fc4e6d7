#pragma once

#include <map>
#include <string>
#include <vector>

#include "merlin/errors.hpp"
#include "merlin/metrics.hpp"
#include "merlin/types.hpp"

namespace merlin::ensemble {

// Ordered predictor walk: the first prediction different from the trigger
// class wins; when every earlier predictor says the trigger class, the last
// predictor decides regardless of its answer.
struct PriorityPolicy {
  std::vector<std::string> order = {"gat", "plm", "pvm"};
  ClassLabel trigger = ClassLabel::High;
};

inline ClassLabel priority_predict(const std::map<std::string, ClassLabel>& predictions,
                                   const PriorityPolicy& policy) {
  if (policy.order.empty()) throw ConfigError("priority_predict: empty predictor order");
  for (std::size_t i = 0; i < policy.order.size(); ++i) {
    auto it = predictions.find(policy.order[i]);
    if (it == predictions.end())
      throw DataError("priority_predict: missing predictor '" + policy.order[i] + "'");
    if (i + 1 == policy.order.size()) return it->second;
    if (it->second != policy.trigger) return it->second;
  }
  return policy.trigger;  // unreachable
}

// Applies the priority rule per id over aligned prediction maps.
inline std::map<std::string, ClassLabel> ensemble_predict(
    const std::map<std::string, std::map<std::string, ClassLabel>>& per_predictor,
    const PriorityPolicy& policy) {
  if (per_predictor.empty()) throw DataError("ensemble_predict: no predictors");
  const auto& first = per_predictor.begin()->second;
  for (const auto& [name, preds] : per_predictor)
    if (preds.size() != first.size())
      throw DataError("ensemble_predict: predictor '" + name + "' id set misaligned");

  std::map<std::string, ClassLabel> out;
  for (const auto& [id, _] : first) {
    std::map<std::string, ClassLabel> votes;
    for (const auto& [name, preds] : per_predictor) {
      auto it = preds.find(id);
      if (it == preds.end())
        throw DataError("ensemble_predict: predictor '" + name + "' missing id '" + id + "'");
      votes[name] = it->second;
    }
    out[id] = priority_predict(votes, policy);
  }
  return out;
}

inline metrics::FinancialReport ensemble_evaluate(
    const std::map<std::string, std::map<std::string, ClassLabel>>& per_predictor,
    const std::map<std::string, ClassLabel>& truths, const PriorityPolicy& policy) {
  auto preds = ensemble_predict(per_predictor, policy);
  return metrics::build_report(metrics::confusion(preds, truths));
}

}  // namespace merlin::ensemble
