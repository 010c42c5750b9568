#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ifield {

// Errors that map onto distinct CLI exit codes.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& key, const std::string& msg)
      : std::runtime_error("config key '" + key + "': " + msg), key(key) {}
  std::string key;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis-aligned box in normalized image coordinates. Construction rejects
// degenerate or out-of-image boxes.
class Box {
 public:
  Box() : Box(0.0, 0.0, 1.0, 1.0) {}

  Box(double x1, double y1, double x2, double y2) : c_{x1, y1, x2, y2} {
    if (!valid(x1, y1, x2, y2)) {
      std::ostringstream os;
      os << "invalid box (" << x1 << ", " << y1 << ", " << x2 << ", " << y2 << ")";
      throw std::invalid_argument(os.str());
    }
  }

  static bool valid(double x1, double y1, double x2, double y2) {
    auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    return in01(x1) && in01(y1) && in01(x2) && in01(y2) && x2 > x1 && y2 > y1;
  }

  // Clips arbitrary regressed coordinates into a valid box.
  static Box clipped(double x1, double y1, double x2, double y2, double min_size = 1e-4) {
    auto c01 = [](double v) { return std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0; };
    x1 = c01(x1), y1 = c01(y1), x2 = c01(x2), y2 = c01(y2);
    if (x2 < x1) std::swap(x1, x2);
    if (y2 < y1) std::swap(y1, y2);
    if (x2 - x1 < min_size) {
      x2 = std::min(1.0, x1 + min_size);
      x1 = x2 - min_size;
    }
    if (y2 - y1 < min_size) {
      y2 = std::min(1.0, y1 + min_size);
      y1 = y2 - min_size;
    }
    return Box(x1, y1, x2, y2);
  }

  double x1() const { return c_[0]; }
  double y1() const { return c_[1]; }
  double x2() const { return c_[2]; }
  double y2() const { return c_[3]; }
  double width() const { return c_[2] - c_[0]; }
  double height() const { return c_[3] - c_[1]; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (c_[0] + c_[2]); }
  double cy() const { return 0.5 * (c_[1] + c_[3]); }
  const std::array<double, 4>& coords() const { return c_; }

  friend bool operator==(const Box& a, const Box& b) { return a.c_ == b.c_; }

 private:
  std::array<double, 4> c_;
};

// One human-object hypothesis as produced by the model.
struct PairCandidate {
  std::size_t scene = 0;
  std::size_t human = 0;   // index into the scene's humans
  std::size_t object = 0;  // index into the scene's objects
  Box human_box;
  Box object_box;
  int object_class = 0;
  std::vector<double> feature;
  std::vector<double> verb_scores;   // S_v per verb
  std::vector<double> final_scores;  // S per verb
  std::optional<double> interactiveness;  // S_b
  std::optional<double> energy;           // A_s of the interactive-designated cluster
  int group = -1;
  double score = 0.0;  // scalar confidence used for suppression and top-k
};

}  // namespace ifield
