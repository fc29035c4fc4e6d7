#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "merlin/errors.hpp"

namespace merlin {

// Price categories, ordered Low < Mid < High.
enum class ClassLabel : int { Low = 0, Mid = 1, High = 2 };

constexpr int kNumClasses = 3;

inline const char* label_name(ClassLabel c) {
  switch (c) {
    case ClassLabel::Low: return "low";
    case ClassLabel::Mid: return "mid";
    case ClassLabel::High: return "high";
  }
  return "?";
}

inline ClassLabel label_from_name(const std::string& s) {
  if (s == "low") return ClassLabel::Low;
  if (s == "mid") return ClassLabel::Mid;
  if (s == "high") return ClassLabel::High;
  throw DataError("unknown class label: " + s);
}

inline ClassLabel label_from_index(int i) {
  if (i < 0 || i >= kNumClasses) throw DataError("class index out of range");
  return static_cast<ClassLabel>(i);
}

enum class Modality : std::uint8_t { Text = 0, Image = 1, Fused = 2, Graph = 3 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Image: return "image";
    case Modality::Fused: return "fused";
    case Modality::Graph: return "graph";
  }
  return "?";
}

// Dense real vector with a modality tag.
struct Embedding {
  std::vector<double> values;
  Modality modality = Modality::Text;

  Embedding() = default;
  Embedding(std::vector<double> v, Modality m) : values(std::move(v)), modality(m) {}

  std::size_t dim() const { return values.size(); }
};

}  // namespace merlin
