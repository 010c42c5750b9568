#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ifield/autodiff.hpp"
#include "ifield/geometry.hpp"

namespace ifield::losses {

using ad::Var;

inline constexpr double kProbEps = 1e-7;

struct LossWeights {
  // pair losses
  double lambda1 = 1.0;  // giou
  double lambda2 = 2.5;  // box L1
  double lambda3 = 1.0;  // object class
  // field losses
  double lambda4 = 1.0;  // cardinality
  double lambda5 = 1.0;  // interactiveness cross-entropy
  double lambda6 = 1.0;  // clustering
  double lambda_r = 1.0; // both rank losses

  void validate() const {
    for (double w : {lambda1, lambda2, lambda3, lambda4, lambda5, lambda6, lambda_r}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
  }
};

// Which of the two clusters carries the interactive label.
enum class Role { kSmallInteractive, kLargeInteractive };

inline void check_same_rows(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != 1 || b.cols() != 1) {
    throw std::invalid_argument(std::string(what) + ": assignment vectors must be matching (N x 1)");
  }
}

// sum A_s - sum A_l, plus |n_T - sum A_int| when n_T is given. A_int is A_s
// unless the label correspondence maps the large cluster to "interactive".
inline Var card_loss(const Var& a_s, const Var& a_l, std::optional<double> n_t = std::nullopt,
                     Role role = Role::kSmallInteractive) {
  check_same_rows(a_s, a_l, "card_loss");
  Var loss = ad::sum(a_s) - ad::sum(a_l);
  if (n_t) {
    if (*n_t < 0.0 || *n_t > static_cast<double>(a_s.rows())) {
      throw std::invalid_argument("card_loss: n_T outside [0, N]");
    }
    const Var& a_int = role == Role::kSmallInteractive ? a_s : a_l;
    loss = loss + ad::abs(ad::sum(a_int) * -1.0 + *n_t);
  }
  return loss;
}

// sum_{i in P_S} sum_{j in P_L} (D_j - D_i); the sets are constants of the
// forward pass and pairs with A_s == A_l belong to neither.
inline Var rank_loss(const Var& d, const Var& a_s, const Var& a_l) {
  check_same_rows(a_s, a_l, "rank_loss");
  if (d.rows() != a_s.rows() || d.cols() != 1) throw std::invalid_argument("rank_loss: indicator shape mismatch");
  const std::size_t n = d.rows();
  double n_s = 0.0, n_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a_s(i, 0) > a_l(i, 0)) n_s += 1.0;
    else if (a_l(i, 0) > a_s(i, 0)) n_l += 1.0;
  }
  Tensor w(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (a_s(i, 0) > a_l(i, 0)) w(i, 0) = -n_l;
    else if (a_l(i, 0) > a_s(i, 0)) w(i, 0) = n_s;
  }
  return ad::sum(d * ad::constant(std::move(w)));
}

// Pairwise co-assignment loss over all ordered pairs (i, j), diagonal included.
inline Var clus_loss(const Var& a_s, const Var& a_l, const std::vector<int>& labels) {
  check_same_rows(a_s, a_l, "clus_loss");
  const std::size_t n = a_s.rows();
  if (labels.size() != n) throw std::invalid_argument("clus_loss: label count mismatch");
  const Var p = ad::clamp(ad::matmul(a_s, ad::transpose(a_s)) + ad::matmul(a_l, ad::transpose(a_l)), kProbEps,
                          1.0 - kProbEps);
  Tensor alpha(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) alpha(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
  const Var al = ad::constant(alpha);
  return ad::sum((al - 1.0) * ad::log(1.0 - p) - al * ad::log(p));
}

// Mean binary cross-entropy of A_int against binary labels.
inline Var interactiveness_ce(const Var& a_int, const std::vector<int>& labels) {
  if (a_int.cols() != 1 || labels.size() != a_int.rows()) {
    throw std::invalid_argument("interactiveness_ce: label count mismatch");
  }
  Tensor y(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) y(i, 0) = labels[i] ? 1.0 : 0.0;
  const Var t = ad::constant(y);
  const Var p = ad::clamp(a_int, kProbEps, 1.0 - kProbEps);
  return ad::mean(-(t * ad::log(p) + (1.0 - t) * ad::log(1.0 - p)));
}

// Role mapping that minimizes the cross-entropy; exact ties pick P_S.
inline Role correspondence(const Var& a_s, const Var& a_l, const std::vector<int>& labels) {
  const double ce_s = interactiveness_ce(ad::detach(a_s), labels).item();
  const double ce_l = interactiveness_ce(ad::detach(a_l), labels).item();
  return ce_l < ce_s ? Role::kLargeInteractive : Role::kSmallInteractive;
}

struct FieldLossTerms {
  Var card, ce, clus, rank_r, rank_m;
};

// Computes every field loss component on one group. Without labels the
// unsupervised cardinality loss is used and ce/clus are zero.
inline FieldLossTerms field_loss_terms(const Var& a_s, const Var& a_l, const Var& d_r, const Var& d_m,
                                       const std::vector<int>* labels) {
  FieldLossTerms t;
  t.rank_r = rank_loss(d_r, a_s, a_l);
  t.rank_m = rank_loss(d_m, a_s, a_l);
  if (labels) {
    const Role role = correspondence(a_s, a_l, *labels);
    double n_t = 0.0;
    for (int y : *labels) n_t += y ? 1.0 : 0.0;
    const Var& a_int = role == Role::kSmallInteractive ? a_s : a_l;
    const Var& a_non = role == Role::kSmallInteractive ? a_l : a_s;
    t.card = card_loss(a_s, a_l, n_t, role);
    t.ce = interactiveness_ce(a_int, *labels);
    t.clus = clus_loss(a_int, a_non, *labels);
  } else {
    t.card = card_loss(a_s, a_l);
    t.ce = ad::constant(Tensor::scalar(0.0));
    t.clus = ad::constant(Tensor::scalar(0.0));
  }
  return t;
}

inline Var field_loss(const FieldLossTerms& t, const LossWeights& w) {
  return t.card * w.lambda4 + t.ce * w.lambda5 + t.clus * w.lambda6 + (t.rank_r + t.rank_m) * w.lambda_r;
}

// ---------------------------------------------------------------------------
// Pair detection losses

struct PairTargets {
  std::vector<std::size_t> matched;    // prediction rows that received a ground truth
  Tensor human_boxes;                  // (|matched| x 4)
  Tensor object_boxes;                 // (|matched| x 4)
  std::vector<int> class_targets;      // one per prediction row; no-object = num classes
};

struct PairLossTerms {
  Var giou_h, giou_o, reg_h, reg_o, cls;
};

// human/object boxes are (N x 4); class_logits is (N x (K+1)) with the last
// column for no-object.
inline PairLossTerms pair_loss_terms(const Var& human_boxes, const Var& object_boxes, const Var& class_logits,
                                     const PairTargets& targets) {
  PairLossTerms t;
  const std::size_t n = class_logits.rows();
  if (targets.class_targets.size() != n) throw std::invalid_argument("pair_loss: class target count mismatch");
  const Var zero = ad::constant(Tensor::scalar(0.0));
  if (targets.matched.empty()) {
    t.giou_h = t.giou_o = t.reg_h = t.reg_o = zero;
  } else {
    const Var ph = ad::select_rows(human_boxes, targets.matched);
    const Var po = ad::select_rows(object_boxes, targets.matched);
    const Var th = ad::constant(targets.human_boxes);
    const Var to = ad::constant(targets.object_boxes);
    t.giou_h = ad::mean(1.0 - giou_rows(ph, th));
    t.giou_o = ad::mean(1.0 - giou_rows(po, to));
    t.reg_h = ad::mean(ad::abs(ph - th));
    t.reg_o = ad::mean(ad::abs(po - to));
  }
  const Var logp = ad::log_softmax_rows(class_logits);
  Tensor onehot(n, class_logits.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const int c = targets.class_targets[i];
    if (c < 0 || static_cast<std::size_t>(c) >= class_logits.cols()) {
      throw std::invalid_argument("pair_loss: class target out of range");
    }
    onehot(i, static_cast<std::size_t>(c)) = 1.0;
  }
  t.cls = ad::sum(logp * ad::constant(onehot)) * (-1.0 / static_cast<double>(n));
  return t;
}

inline Var pair_loss(const PairLossTerms& t, const LossWeights& w) {
  return (t.giou_h + t.giou_o) * w.lambda1 + (t.reg_h + t.reg_o) * w.lambda2 + t.cls * w.lambda3;
}

// Mean per-verb binary cross-entropy on sigmoid scores.
inline Var verb_loss(const Var& verb_logits, const Tensor& targets) {
  if (!verb_logits.value().same_shape(targets)) throw std::invalid_argument("verb_loss: shape mismatch");
  const Var p = ad::clamp(ad::sigmoid(verb_logits), kProbEps, 1.0 - kProbEps);
  const Var t = ad::constant(targets);
  return ad::mean(-(t * ad::log(p) + (1.0 - t) * ad::log(1.0 - p)));
}

}  // namespace ifield::losses
