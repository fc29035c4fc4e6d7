#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "merlin/errors.hpp"
#include "merlin/io.hpp"
#include "merlin/rng.hpp"
#include "merlin/types.hpp"

namespace merlin::corpus {

// 8-bit RGB pixel grid, row-major, channel-interleaved.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  bool operator==(const Image&) const = default;
};

struct NftRecord {
  std::string id;
  Image image;
  std::string text;
  std::vector<double> prices;  // USD, all > 0
  std::optional<std::string> collection;
};

enum class Split { Train, Val };

struct LabelingScheme {
  double q1 = 0.0;
  double q3 = 0.0;
};

struct LabeledDataset {
  std::vector<NftRecord> records;
  std::map<std::string, ClassLabel> labels;
  LabelingScheme scheme;
  std::map<std::string, Split> split;
};

// ---------------------------------------------------------------------------
// P6 PPM

inline Image read_ppm(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto next_int = [&]() -> long {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start) throw DataError(path.string() + ": malformed PPM header");
    return std::stol(bytes.substr(start, pos - start));
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw DataError(path.string() + ": not a P6 PPM");
  pos = 2;
  long w = next_int();
  long h = next_int();
  long maxval = next_int();
  if (w <= 0 || h <= 0) throw DataError(path.string() + ": non-positive PPM dimensions");
  if (maxval != 255) throw DataError(path.string() + ": only maxval 255 supported");
  ++pos;  // single whitespace after maxval
  std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() - pos < need) throw DataError(path.string() + ": truncated PPM payload");

  Image img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::string b = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  b.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  io::atomic_write_file(path, b);
}

// ---------------------------------------------------------------------------
// Dataset JSON Lines

inline void validate_record(const NftRecord& r, const std::string& where) {
  if (r.id.empty()) throw DataError(where + ": empty id");
  if (r.prices.empty()) throw DataError(where + ": empty prices");
  for (double p : r.prices)
    if (!(p > 0.0)) throw DataError(where + ": non-positive price");
  if (r.image.height == 0 || r.image.width == 0) throw DataError(where + ": empty image");
  if (r.image.pixels.size() != r.image.height * r.image.width * 3)
    throw DataError(where + ": pixel buffer size mismatch");
}

// One record per line: {"id", "image" (relative PPM path), "text", "prices",
// "collection"}. Image files are resolved against the dataset's directory.
inline std::vector<NftRecord> load_dataset(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  std::filesystem::path base = path.parent_path();
  std::vector<NftRecord> records;
  std::unordered_set<std::string> seen;

  std::istringstream lines(bytes);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(where + ": malformed line");
    try {
      NftRecord r;
      r.id = j.at("id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      r.prices = j.at("prices").get<std::vector<double>>();
      if (j.contains("collection") && !j.at("collection").is_null())
        r.collection = j.at("collection").get<std::string>();
      std::string img_rel = j.at("image").get<std::string>();
      r.image = read_ppm(base / img_rel);
      if (!seen.insert(r.id).second) throw DataError(where + ": duplicate id '" + r.id + "'");
      validate_record(r, where);
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return records;
}

// Writes dataset JSONL plus one PPM per record under <dir>/images/.
inline void save_dataset(const std::filesystem::path& jsonl_path,
                         const std::vector<NftRecord>& records) {
  std::filesystem::path base = jsonl_path.parent_path();
  std::filesystem::create_directories(base / "images");
  std::string out;
  for (const NftRecord& r : records) {
    std::string img_rel = "images/" + r.id + ".ppm";
    write_ppm(base / img_rel, r.image);
    nlohmann::json j;
    j["id"] = r.id;
    j["image"] = img_rel;
    j["text"] = r.text;
    j["prices"] = r.prices;
    j["collection"] = r.collection ? nlohmann::json(*r.collection) : nlohmann::json(nullptr);
    out += j.dump();
    out += '\n';
  }
  io::atomic_write_file(jsonl_path, out);
}

// ---------------------------------------------------------------------------
// Labeling

inline double average_price(const NftRecord& r) {
  if (r.prices.empty()) throw DataError("average_price: record '" + r.id + "' has no prices");
  return std::accumulate(r.prices.begin(), r.prices.end(), 0.0) /
         static_cast<double>(r.prices.size());
}

// Keeps records with at least min_sales recorded prices, order preserved.
inline std::vector<NftRecord> filter_secondary(const std::vector<NftRecord>& records,
                                               std::size_t min_sales = 2) {
  if (min_sales < 1) throw ConfigError("filter_secondary: min_sales must be >= 1");
  std::vector<NftRecord> kept;
  for (const NftRecord& r : records)
    if (r.prices.size() >= min_sales) kept.push_back(r);
  return kept;
}

// Linear-interpolation quantile between order statistics (the common
// spreadsheet/NumPy default) over a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw NumericError("quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  double h = static_cast<double>(sorted.size() - 1) * p;
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo >= sorted.size() - 1) return sorted.back();
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline ClassLabel label_for_price(double avg, const LabelingScheme& s) {
  if (avg <= s.q1) return ClassLabel::Low;
  if (avg > s.q3) return ClassLabel::High;
  return ClassLabel::Mid;
}

// Quartile thresholds over the average prices; Low: avg <= q1, High: avg > q3.
inline std::pair<LabelingScheme, std::map<std::string, ClassLabel>> compute_labeling(
    const std::vector<NftRecord>& records) {
  if (records.size() < 4) throw DataError("compute_labeling: need at least 4 records");
  std::vector<double> avgs;
  avgs.reserve(records.size());
  for (const NftRecord& r : records) avgs.push_back(average_price(r));
  std::vector<double> sorted = avgs;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw DataError("compute_labeling: degenerate price distribution");

  LabelingScheme scheme;
  scheme.q1 = quantile_sorted(sorted, 0.25);
  scheme.q3 = quantile_sorted(sorted, 0.75);

  std::map<std::string, ClassLabel> labels;
  for (std::size_t i = 0; i < records.size(); ++i)
    labels[records[i].id] = label_for_price(avgs[i], scheme);
  return {scheme, labels};
}

// Per-class seeded shuffle; the first round(n_c * ratio) of each class go to
// the training split.
inline std::map<std::string, Split> stratified_split(
    const std::vector<NftRecord>& records, const std::map<std::string, ClassLabel>& labels,
    double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0))
    throw ConfigError("stratified_split: ratio must be in (0, 1)");
  std::map<ClassLabel, std::vector<std::string>> by_class;
  for (const NftRecord& r : records) {
    auto it = labels.find(r.id);
    if (it == labels.end()) throw DataError("stratified_split: unlabeled record '" + r.id + "'");
    by_class[it->second].push_back(r.id);
  }
  std::map<std::string, Split> split;
  for (auto& [cls, ids] : by_class) {
    if (ids.size() < 2)
      throw DataError(std::string("stratified_split: class '") + label_name(cls) +
                      "' has fewer than 2 members");
    std::sort(ids.begin(), ids.end());
    Rng rng(seed, hash64(label_name(cls)));
    shuffle(ids, rng);
    auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(ids.size()) * train_ratio));
    n_train = std::min(n_train, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      split[ids[i]] = i < n_train ? Split::Train : Split::Val;
  }
  return split;
}

// ---------------------------------------------------------------------------
// Label/split file: header line {"q1","q3","seed",...}, then one line per
// record {"id","label","split"}.

struct LabelFile {
  LabelingScheme scheme;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::map<std::string, ClassLabel> labels;
  std::map<std::string, Split> split;
};

inline void save_label_file(const std::filesystem::path& path, const LabelFile& f) {
  nlohmann::json header;
  header["q1"] = f.scheme.q1;
  header["q3"] = f.scheme.q3;
  header["seed"] = f.seed;
  header["config_hash"] = f.config_hash;
  std::string out = header.dump();
  out += '\n';
  for (const auto& [id, label] : f.labels) {
    auto it = f.split.find(id);
    if (it == f.split.end()) throw DataError("save_label_file: missing split for '" + id + "'");
    nlohmann::json j;
    j["id"] = id;
    j["label"] = label_name(label);
    j["split"] = it->second == Split::Train ? "train" : "val";
    out += j.dump();
    out += '\n';
  }
  io::atomic_write_file(path, out);
}

inline LabelFile load_label_file(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  std::istringstream lines(bytes);
  std::string line;
  if (!std::getline(lines, line)) throw DataError(path.string() + ": empty label file");
  nlohmann::json header = nlohmann::json::parse(line);
  LabelFile f;
  f.scheme.q1 = header.at("q1").get<double>();
  f.scheme.q3 = header.at("q3").get<double>();
  f.seed = header.at("seed").get<std::uint64_t>();
  if (header.contains("config_hash")) f.config_hash = header.at("config_hash").get<std::uint64_t>();
  std::size_t lineno = 1;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed line");
    std::string id = j.at("id").get<std::string>();
    f.labels[id] = label_from_name(j.at("label").get<std::string>());
    std::string sp = j.at("split").get<std::string>();
    if (sp != "train" && sp != "val")
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad split '" + sp + "'");
    f.split[id] = sp == "train" ? Split::Train : Split::Val;
  }
  return f;
}

}  // namespace merlin::corpus
