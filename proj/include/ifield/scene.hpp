#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ifield/types.hpp"

namespace ifield {

// Interactive-ratio bucket of a scene.
enum class Regime { kMinority = 0, kBalanced = 1, kMajority = 2 };

inline constexpr std::size_t kRegimeCount = 3;

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kMinority: return "minority";
    case Regime::kBalanced: return "balanced";
    case Regime::kMajority: return "majority";
  }
  return "unknown";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "minority") return Regime::kMinority;
  if (s == "balanced") return Regime::kBalanced;
  if (s == "majority") return Regime::kMajority;
  throw DataError("unknown regime '" + s + "'");
}

// Balanced means an interactive fraction within [0.4, 0.6].
inline constexpr double kBalancedLow = 0.4;
inline constexpr double kBalancedHigh = 0.6;

inline Regime regime_for_fraction(double interactive_fraction) {
  if (interactive_fraction < kBalancedLow) return Regime::kMinority;
  if (interactive_fraction > kBalancedHigh) return Regime::kMajority;
  return Regime::kBalanced;
}

struct SceneObject {
  Box box;
  int category = 0;
};

struct GtPair {
  std::size_t human = 0;
  std::size_t object = 0;
  std::vector<int> verbs;
};

struct Scene {
  std::uint64_t seed = 0;
  Regime regime = Regime::kMinority;
  std::vector<Box> humans;
  std::vector<SceneObject> objects;
  std::vector<GtPair> gt_pairs;

  std::size_t candidate_count() const { return humans.size() * objects.size(); }

  double interactive_fraction() const {
    const std::size_t n = candidate_count();
    return n == 0 ? 0.0 : static_cast<double>(gt_pairs.size()) / static_cast<double>(n);
  }

  bool is_interactive(std::size_t h, std::size_t o) const {
    for (const auto& g : gt_pairs)
      if (g.human == h && g.object == o) return true;
    return false;
  }

  void validate() const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& g : gt_pairs) {
      if (g.human >= humans.size() || g.object >= objects.size()) {
        throw DataError("scene " + std::to_string(seed) + ": gt pair references a missing instance");
      }
      if (!seen.insert({g.human, g.object}).second) {
        throw DataError("scene " + std::to_string(seed) + ": duplicate gt pair");
      }
    }
  }
};

}  // namespace ifield
