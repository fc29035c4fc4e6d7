#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "merlin/corpus.hpp"
#include "merlin/rng.hpp"
#include "merlin/types.hpp"

namespace merlin::synth {

// Planted-signal corpus generator. Class shares are 25/50/25 by price band,
// with a strict gap between bands so the quartile thresholds always fall
// between classes. Signal placement per modality is configurable:
//   BothStrong:    texts and images each separate all three classes.
//   Complementary: texts separate Low only (Mid and High share one text
//                  distribution); images separate High only.
//   NoSignal:      both modalities are pure noise.
enum class SignalMode { BothStrong, Complementary, NoSignal };

inline SignalMode signal_mode_from_name(const std::string& s) {
  if (s == "both_strong") return SignalMode::BothStrong;
  if (s == "complementary") return SignalMode::Complementary;
  if (s == "no_signal") return SignalMode::NoSignal;
  throw ConfigError("unknown signal mode '" + s + "'");
}

inline const char* signal_mode_name(SignalMode m) {
  switch (m) {
    case SignalMode::BothStrong: return "both_strong";
    case SignalMode::Complementary: return "complementary";
    case SignalMode::NoSignal: return "no_signal";
  }
  return "?";
}

struct SyntheticConfig {
  std::size_t count = 2000;
  std::size_t image_size = 16;  // square, divisible by the patch size in use
  std::size_t text_words = 10;  // words per description
  SignalMode mode = SignalMode::BothStrong;
  double signal_strength = 0.95;  // probability a class-signal word is emitted
  std::size_t collections = 6;
  std::uint64_t seed = 0;
};

namespace detail {

inline const std::vector<std::string>& noise_words() {
  static const std::vector<std::string> words = {
      "token",   "art",     "piece",   "digital", "edition", "series",  "item",
      "mint",    "original", "artwork", "style",   "design",  "color",   "shape",
      "frame",   "canvas",  "print",   "asset",   "work",    "object",  "form",
      "texture", "scene",   "figure",  "motif",   "pattern", "layer",   "tone"};
  return words;
}

inline const std::array<std::vector<std::string>, 3>& class_words() {
  static const std::array<std::vector<std::string>, 3> words = {
      std::vector<std::string>{"common", "plain", "basic", "simple", "ordinary"},
      std::vector<std::string>{"classic", "standard", "regular", "typical", "familiar"},
      std::vector<std::string>{"legendary", "rare", "golden", "mythic", "epic"}};
  return words;
}

// Mean pixel level per class; bands chosen so the within-class noise never
// crosses between classes.
inline int image_level(ClassLabel cls, SignalMode mode) {
  switch (mode) {
    case SignalMode::BothStrong:
      return cls == ClassLabel::Low ? 40 : cls == ClassLabel::Mid ? 128 : 216;
    case SignalMode::Complementary:
      return cls == ClassLabel::High ? 216 : 110;
    case SignalMode::NoSignal:
      return 128;
  }
  return 128;
}

inline int text_class_index(ClassLabel cls, SignalMode mode) {
  // Which class-word pool the text draws from; -1 means noise only.
  switch (mode) {
    case SignalMode::BothStrong:
      return static_cast<int>(cls);
    case SignalMode::Complementary:
      return cls == ClassLabel::Low ? 0 : -1;
    case SignalMode::NoSignal:
      return -1;
  }
  return -1;
}

}  // namespace detail

inline std::vector<corpus::NftRecord> generate(const SyntheticConfig& cfg) {
  if (cfg.count < 8) throw ConfigError("gen-synthetic: count must be >= 8");
  if (cfg.image_size == 0) throw ConfigError("gen-synthetic: image size must be positive");

  // Intended class per index: 25% Low, 50% Mid, 25% High.
  std::size_t n_low = cfg.count / 4;
  std::size_t n_high = cfg.count / 4;
  std::vector<ClassLabel> intended;
  intended.insert(intended.end(), n_low, ClassLabel::Low);
  intended.insert(intended.end(), cfg.count - n_low - n_high, ClassLabel::Mid);
  intended.insert(intended.end(), n_high, ClassLabel::High);
  Rng order_rng(cfg.seed, hash64("synthetic.order"));
  shuffle(intended, order_rng);

  std::vector<corpus::NftRecord> records;
  records.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    ClassLabel cls = intended[i];
    Rng rng(cfg.seed, hash64("synthetic.record") ^ i);
    corpus::NftRecord r;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "nft-%06zu", i);
    r.id = idbuf;

    // Prices: 2-4 sales whose mean sits inside the class band. Bands are
    // separated by gaps so realized quartiles split exactly along classes.
    double mean;
    switch (cls) {
      case ClassLabel::Low: mean = rng.next_uniform(1.0, 10.0); break;
      case ClassLabel::Mid: mean = rng.next_uniform(20.0, 100.0); break;
      case ClassLabel::High: mean = rng.next_uniform(200.0, 1000.0); break;
      default: mean = 1.0;
    }
    std::size_t sales = 2 + rng.next_below(3);
    double spread = 0.1 * mean;
    if (sales % 2 == 1) r.prices.push_back(mean);
    for (std::size_t s = 0; s < sales / 2; ++s) {
      double d = spread * static_cast<double>(s + 1) / static_cast<double>(sales);
      r.prices.push_back(mean - d);
      r.prices.push_back(mean + d);
    }

    // Text.
    const auto& noise = detail::noise_words();
    int pool = detail::text_class_index(cls, cfg.mode);
    for (std::size_t w = 0; w < cfg.text_words; ++w) {
      bool emit_signal = pool >= 0 && rng.next_bool(cfg.signal_strength) && w < 3;
      if (emit_signal) {
        const auto& cw = detail::class_words()[static_cast<std::size_t>(pool)];
        r.text += cw[rng.next_below(cw.size())];
      } else {
        r.text += noise[rng.next_below(noise.size())];
      }
      if (w + 1 < cfg.text_words) r.text += ' ';
    }

    // Image: class level plus bounded noise.
    int level = detail::image_level(cls, cfg.mode);
    r.image.height = cfg.image_size;
    r.image.width = cfg.image_size;
    r.image.pixels.resize(cfg.image_size * cfg.image_size * 3);
    for (std::size_t p = 0; p < r.image.pixels.size(); ++p) {
      int v = level + static_cast<int>(rng.next_below(49)) - 24;
      r.image.pixels[p] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }

    // Collections loosely follow the class so collection price stats carry
    // signal for the feature-based baseline.
    std::size_t coll_groups = std::max<std::size_t>(1, cfg.collections / 3);
    std::size_t coll = static_cast<std::size_t>(cls) * coll_groups + rng.next_below(coll_groups);
    r.collection = "col-" + std::to_string(coll);

    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace merlin::synth
