#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "merlin/errors.hpp"
#include "merlin/types.hpp"

namespace merlin::metrics {

// 3x3 count matrix: rows are predicted labels, columns are true labels.
struct ConfusionMatrix3 {
  std::array<std::array<long, 3>, 3> counts{};

  void add(ClassLabel predicted, ClassLabel truth, long n = 1) {
    counts[static_cast<std::size_t>(predicted)][static_cast<std::size_t>(truth)] += n;
  }

  long at(ClassLabel predicted, ClassLabel truth) const {
    return counts[static_cast<std::size_t>(predicted)][static_cast<std::size_t>(truth)];
  }

  long predicted_total(ClassLabel p) const {
    const auto& row = counts[static_cast<std::size_t>(p)];
    return row[0] + row[1] + row[2];
  }

  long true_total(ClassLabel t) const {
    std::size_t j = static_cast<std::size_t>(t);
    return counts[0][j] + counts[1][j] + counts[2][j];
  }

  long total() const { return counts[0][0] + counts[0][1] + counts[0][2] + counts[1][0] +
                              counts[1][1] + counts[1][2] + counts[2][0] + counts[2][1] +
                              counts[2][2]; }

  long diagonal() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
};

inline ConfusionMatrix3 confusion(const std::map<std::string, ClassLabel>& predictions,
                                  const std::map<std::string, ClassLabel>& truths) {
  if (predictions.size() != truths.size())
    throw DataError("confusion: prediction/truth key sets differ in size");
  ConfusionMatrix3 cm;
  for (const auto& [id, pred] : predictions) {
    auto it = truths.find(id);
    if (it == truths.end()) throw DataError("confusion: no truth for id '" + id + "'");
    cm.add(pred, it->second);
  }
  return cm;
}

enum class Averaging { Macro, Weighted };

struct GlobalMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

// Per-class precision/recall/F1 with the 0-convention on empty denominators,
// averaged unweighted (macro) or by true-class support (weighted).
inline GlobalMetrics global_metrics(const ConfusionMatrix3& cm, Averaging averaging) {
  long total = cm.total();
  if (total == 0) throw DataError("global_metrics: empty confusion matrix");
  GlobalMetrics g;
  g.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(total);
  for (int c = 0; c < kNumClasses; ++c) {
    ClassLabel cl = static_cast<ClassLabel>(c);
    long tp = cm.at(cl, cl);
    long pred = cm.predicted_total(cl);
    long sup = cm.true_total(cl);
    double precision = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    double recall = sup > 0 ? static_cast<double>(tp) / static_cast<double>(sup) : 0.0;
    double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    double w = averaging == Averaging::Macro
                   ? 1.0 / static_cast<double>(kNumClasses)
                   : static_cast<double>(sup) / static_cast<double>(total);
    g.precision += w * precision;
    g.recall += w * recall;
    g.f1 += w * f1;
  }
  return g;
}

// High-driven financial criteria. Ratios with zero denominators carry an
// explicit undefined flag instead of silent NaN; WLR degenerates to +inf when
// there are High predictions but no losses.
struct HighMetrics {
  double wr = 0.0;
  double lr = 0.0;
  double wlr = 0.0;
  double mr = 0.0;
  double cn = 0.0;
  double rn = 0.0;
  bool wr_defined = false;   // also covers lr
  bool wlr_defined = false;
  bool wlr_infinite = false;
  bool mr_defined = false;
  bool cn_defined = false;  // also covers rn
};

inline HighMetrics high_metrics(const ConfusionMatrix3& cm) {
  HighMetrics h;
  double c_hh = static_cast<double>(cm.at(ClassLabel::High, ClassLabel::High));
  double c_hl = static_cast<double>(cm.at(ClassLabel::High, ClassLabel::Low));
  double c_hm = static_cast<double>(cm.at(ClassLabel::High, ClassLabel::Mid));
  double c_lh = static_cast<double>(cm.at(ClassLabel::Low, ClassLabel::High));
  double c_mh = static_cast<double>(cm.at(ClassLabel::Mid, ClassLabel::High));

  double predicted_high = c_hl + c_hm + c_hh;
  if (predicted_high > 0.0) {
    h.wr_defined = true;
    h.wr = c_hh / predicted_high;
    h.lr = (c_hl + c_hm) / predicted_high;
    if (h.lr > 0.0) {
      h.wlr_defined = true;
      h.wlr = h.wr / h.lr;
    } else if (h.wr > 0.0) {
      h.wlr_infinite = true;
      h.wlr = std::numeric_limits<double>::infinity();
    }
  }

  double true_high = c_lh + c_mh + c_hh;
  if (true_high > 0.0) {
    h.mr_defined = true;
    h.mr = (c_lh + c_mh) / true_high;
  }

  if (h.mr_defined && h.wr_defined && h.mr + h.lr > 0.0) {
    h.cn_defined = true;
    h.cn = h.mr / (h.mr + h.lr);
    h.rn = h.lr / (h.mr + h.lr);
  }
  return h;
}

struct FinancialReport {
  ConfusionMatrix3 counts;
  GlobalMetrics macro;
  GlobalMetrics weighted;
  double accuracy = 0.0;
  HighMetrics high;
};

inline FinancialReport build_report(const ConfusionMatrix3& cm) {
  FinancialReport r;
  r.counts = cm;
  r.macro = global_metrics(cm, Averaging::Macro);
  r.weighted = global_metrics(cm, Averaging::Weighted);
  r.accuracy = r.macro.accuracy;
  r.high = high_metrics(cm);
  return r;
}

inline nlohmann::json report_to_json(const FinancialReport& r) {
  nlohmann::json j;
  j["counts"] = {{r.counts.counts[0][0], r.counts.counts[0][1], r.counts.counts[0][2]},
                 {r.counts.counts[1][0], r.counts.counts[1][1], r.counts.counts[1][2]},
                 {r.counts.counts[2][0], r.counts.counts[2][1], r.counts.counts[2][2]}};
  j["global"]["macro"] = {{"precision", r.macro.precision},
                          {"recall", r.macro.recall},
                          {"f1", r.macro.f1}};
  j["global"]["weighted"] = {{"precision", r.weighted.precision},
                             {"recall", r.weighted.recall},
                             {"f1", r.weighted.f1}};
  j["global"]["accuracy"] = r.accuracy;

  auto put = [](nlohmann::json& dst, const char* key, double v, bool defined) {
    if (defined && std::isfinite(v))
      dst[key] = v;
    else
      dst[key] = nullptr;
  };
  nlohmann::json& high = j["high"];
  put(high, "wr", r.high.wr, r.high.wr_defined);
  put(high, "lr", r.high.lr, r.high.wr_defined);
  put(high, "wlr", r.high.wlr, r.high.wlr_defined);
  put(high, "mr", r.high.mr, r.high.mr_defined);
  put(high, "cn", r.high.cn, r.high.cn_defined);
  put(high, "rn", r.high.rn, r.high.cn_defined);
  std::vector<std::string> flags;
  if (!r.high.wr_defined) flags.push_back("wr_undefined");
  if (r.high.wlr_infinite) flags.push_back("wlr_infinite");
  else if (!r.high.wlr_defined) flags.push_back("wlr_undefined");
  if (!r.high.mr_defined) flags.push_back("mr_undefined");
  if (!r.high.cn_defined) flags.push_back("cn_undefined");
  high["flags"] = flags;
  return j;
}

inline FinancialReport report_from_json(const nlohmann::json& j) {
  FinancialReport r;
  for (int p = 0; p < 3; ++p)
    for (int t = 0; t < 3; ++t)
      r.counts.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)] =
          j.at("counts")[p][t].get<long>();
  return build_report(r.counts);
}

// Aligned table mirroring the ten reported metric columns.
inline std::string render_text(const FinancialReport& r, const std::string& name = "model") {
  auto cell = [](double v, bool defined, bool infinite) -> std::string {
    if (!defined) return infinite ? "inf" : "na";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
  };
  std::string out;
  char line[512];
  std::snprintf(line, sizeof(line), "%-16s %7s %7s %7s %7s %7s %7s %7s %7s %7s %7s\n",
                "model", "P", "R", "F1", "A", "WR", "LR", "WLR", "MR", "Rn", "Cn");
  out += line;
  const HighMetrics& h = r.high;
  std::snprintf(line, sizeof(line),
                "%-16s %7s %7s %7s %7s %7s %7s %7s %7s %7s %7s\n", name.c_str(),
                cell(r.macro.precision, true, false).c_str(),
                cell(r.macro.recall, true, false).c_str(), cell(r.macro.f1, true, false).c_str(),
                cell(r.accuracy, true, false).c_str(), cell(h.wr, h.wr_defined, false).c_str(),
                cell(h.lr, h.wr_defined, false).c_str(),
                cell(h.wlr, h.wlr_defined, h.wlr_infinite).c_str(),
                cell(h.mr, h.mr_defined, false).c_str(), cell(h.rn, h.cn_defined, false).c_str(),
                cell(h.cn, h.cn_defined, false).c_str());
  out += line;
  return out;
}

inline std::string render_report(const FinancialReport& r, const std::string& format) {
  if (format == "json") return report_to_json(r).dump(2) + "\n";
  if (format == "text") return render_text(r);
  throw ConfigError("render_report: unknown format '" + format + "'");
}

}  // namespace merlin::metrics
