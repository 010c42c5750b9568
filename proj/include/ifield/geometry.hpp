#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifield/autodiff.hpp"
#include "ifield/types.hpp"

namespace ifield {

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

inline double giou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  const double eh = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double enclose = ew * eh;
  return inter / uni - (enclose - uni) / enclose;
}

// Differentiable GIoU between matching rows of two (N x 4) box tensors in
// (x1, y1, x2, y2) layout. Returns (N x 1).
inline ad::Var giou_rows(const ad::Var& a, const ad::Var& b) {
  using namespace ad;
  auto col = [](const Var& v, std::size_t c) { return slice_cols(v, c, c + 1); };
  const Var zero = constant(Tensor::scalar(0.0));
  const Var tiny = constant(Tensor::scalar(1e-9));
  const Var ax1 = col(a, 0), ay1 = col(a, 1), ax2 = col(a, 2), ay2 = col(a, 3);
  const Var bx1 = col(b, 0), by1 = col(b, 1), bx2 = col(b, 2), by2 = col(b, 3);
  const Var area_a = maximum(ax2 - ax1, tiny) * maximum(ay2 - ay1, tiny);
  const Var area_b = maximum(bx2 - bx1, tiny) * maximum(by2 - by1, tiny);
  const Var iw = maximum(minimum(ax2, bx2) - maximum(ax1, bx1), zero);
  const Var ih = maximum(minimum(ay2, by2) - maximum(ay1, by1), zero);
  const Var inter = iw * ih;
  const Var uni = area_a + area_b - inter;
  const Var ew = maximum(ax2, bx2) - minimum(ax1, bx1);
  const Var eh = maximum(ay2, by2) - minimum(ay1, by1);
  const Var enclose = maximum(ew * eh, tiny);
  return inter / uni - (enclose - uni) / enclose;
}

inline constexpr double kDefaultNmsThreshold = 0.6;

// Greedy pair-wise suppression: a candidate is dropped when a kept candidate
// with a higher score has the same object class and both its human and object
// boxes overlap by IoU > thr. Output is in descending score order; ties keep
// input order.
inline std::vector<PairCandidate> pairwise_nms(const std::vector<PairCandidate>& preds,
                                               double thr = kDefaultNmsThreshold) {
  if (!(thr > 0.0 && thr < 1.0)) throw std::invalid_argument("pairwise_nms: threshold must be in (0,1)");
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return preds[i].score > preds[j].score; });
  std::vector<PairCandidate> kept;
  kept.reserve(preds.size());
  for (std::size_t idx : order) {
    const PairCandidate& p = preds[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const PairCandidate& k) {
      return k.object_class == p.object_class && iou(k.human_box, p.human_box) > thr &&
             iou(k.object_box, p.object_box) > thr;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

}  // namespace ifield
