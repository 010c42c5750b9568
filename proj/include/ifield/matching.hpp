#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ifield/geometry.hpp"
#include "ifield/losses.hpp"
#include "ifield/scene.hpp"
#include "ifield/tensor.hpp"

namespace ifield::matching {

// Cost assigned to padding rows/columns when the problem is not square.
inline constexpr double kPadCost = 1e6;

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> assignment;  // (prediction, ground truth), by gt index
  std::vector<std::size_t> unmatched_predictions;
  std::vector<std::size_t> unmatched_ground_truths;  // only when gts outnumber predictions
  double total_cost = 0.0;
};

// Minimum-cost assignment of the columns (ground truths) of an N x M cost
// matrix to distinct rows (predictions).
inline MatchResult hungarian(const Tensor& cost) {
  const std::size_t rows = cost.rows(), cols = cost.cols();
  if (!cost.all_finite()) throw std::invalid_argument("hungarian: non-finite cost entry");
  MatchResult result;
  if (cols == 0) {
    for (std::size_t i = 0; i < rows; ++i) result.unmatched_predictions.push_back(i);
    return result;
  }
  if (rows == 0) {
    for (std::size_t j = 0; j < cols; ++j) result.unmatched_ground_truths.push_back(j);
    return result;
  }
  const std::size_t n = std::max(rows, cols);
  auto at = [&](std::size_t i, std::size_t j) {  // 1-based, padded
    return (i <= rows && j <= cols) ? cost(i - 1, j - 1) : kPadCost;
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<bool> row_used(rows, false);
  for (std::size_t j = 1; j <= cols; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows) {
      result.assignment.emplace_back(i - 1, j - 1);
      row_used[i - 1] = true;
      result.total_cost += cost(i - 1, j - 1);
    } else {
      result.unmatched_ground_truths.push_back(j - 1);
    }
  }
  for (std::size_t i = 0; i < rows; ++i)
    if (!row_used[i]) result.unmatched_predictions.push_back(i);
  return result;
}

// What the matcher needs to know about one prediction.
struct MatchablePrediction {
  std::array<double, 4> human;   // (x1, y1, x2, y2), may be slightly outside the image
  std::array<double, 4> object;
  std::vector<double> class_probs;  // K real classes followed by no-object
};

inline double mean_abs_error(const std::array<double, 4>& a, const Box& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < 4; ++k) s += std::abs(a[k] - b.coords()[k]);
  return s / 4.0;
}

inline double match_cost(const MatchablePrediction& pred, const Box& gt_human, const Box& gt_object,
                         int gt_class, const losses::LossWeights& w) {
  if (gt_class < 0 || static_cast<std::size_t>(gt_class) >= pred.class_probs.size()) {
    throw std::invalid_argument("match_cost: ground-truth class outside the prediction's distribution");
  }
  const Box ph = Box::clipped(pred.human[0], pred.human[1], pred.human[2], pred.human[3]);
  const Box po = Box::clipped(pred.object[0], pred.object[1], pred.object[2], pred.object[3]);
  const double cls = 1.0 - pred.class_probs[static_cast<std::size_t>(gt_class)];
  const double l1 = mean_abs_error(pred.human, gt_human) + mean_abs_error(pred.object, gt_object);
  const double g = (1.0 - giou(ph, gt_human)) + (1.0 - giou(po, gt_object));
  return w.lambda3 * cls + w.lambda2 * l1 + w.lambda1 * g;
}

struct CandidateTarget {
  int gt = -1;  // matched gt pair index, -1 if none
  bool interactive = false;
  int class_target = 0;  // gt class, or the no-object index
  std::vector<int> verbs;
  Box human_box, object_box;  // gt boxes when matched
};

struct LabelAssignment {
  std::vector<CandidateTarget> targets;
  std::map<int, int> n_t;  // per field group
  std::size_t overflow = 0;  // gts left without a prediction
};

// Matches across the whole image, then counts interactive targets per group.
// groups[i] is the field group of prediction i.
inline LabelAssignment assign_labels(const Scene& scene, const std::vector<MatchablePrediction>& preds,
                                     const std::vector<int>& groups, const losses::LossWeights& w) {
  if (groups.size() != preds.size()) throw std::invalid_argument("assign_labels: group count mismatch");
  const std::size_t num_classes = preds.empty() ? 0 : preds[0].class_probs.size() - 1;
  Tensor cost(preds.size(), scene.gt_pairs.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < scene.gt_pairs.size(); ++j) {
      const auto& gp = scene.gt_pairs[j];
      const auto& obj = scene.objects[gp.object];
      cost(i, j) = match_cost(preds[i], scene.humans[gp.human], obj.box, obj.category, w);
    }
  const MatchResult m = hungarian(cost);

  LabelAssignment out;
  out.targets.resize(preds.size());
  for (auto& t : out.targets) t.class_target = static_cast<int>(num_classes);
  for (int g : groups) out.n_t.emplace(g, 0);
  for (const auto& [pi, gj] : m.assignment) {
    const auto& gp = scene.gt_pairs[gj];
    auto& t = out.targets[pi];
    t.gt = static_cast<int>(gj);
    t.interactive = true;
    t.class_target = scene.objects[gp.object].category;
    t.verbs = gp.verbs;
    t.human_box = scene.humans[gp.human];
    t.object_box = scene.objects[gp.object].box;
    ++out.n_t[groups[pi]];
  }
  out.overflow = m.unmatched_ground_truths.size();
  return out;
}

}  // namespace ifield::matching
