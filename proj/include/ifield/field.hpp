#pragma once

// Interactiveness field: two-cluster summaries of the candidate pairs that
// share an object, the per-pair energy, and the field-change indicators.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifield/autodiff.hpp"

namespace ifield::field {

using ad::Var;

// Candidate pair features of one field group (N x C), one row per pair.
struct PairFeatures {
  Tensor features;
  int group_key = -1;
};

inline void validate_features(const Tensor& f) {
  if (f.rows() < 1) throw std::invalid_argument("pair features: need at least one pair");
  if (f.cols() < 2) throw std::invalid_argument("pair features: need at least two feature columns");
  if (!f.all_finite()) throw std::invalid_argument("pair features: non-finite entry");
}

struct Centroids {
  Var small;  // (1 x C), centroid of the smaller hierarchical cluster
  Var large;  // (1 x C)
};

// Field summary: centroids c_s, c_l (1 x C) and assignments A_s, A_l (N x 1).
struct FieldState {
  Var c_s, c_l;
  Var a_s, a_l;

  Var summary() const { return ad::concat_cols({c_s, c_l}); }
  std::size_t size() const { return a_s.rows(); }
  double mass_s() const { return column_sum(a_s); }
  double mass_l() const { return column_sum(a_l); }

  FieldState swapped() const { return {c_l, c_s, a_l, a_s}; }

 private:
  static double column_sum(const Var& v) {
    double s = 0.0;
    for (double x : v.value().data()) s += x;
    return s;
  }
};

using SummaryFn = std::function<FieldState(const Var& features, const Centroids& init)>;

// ---------------------------------------------------------------------------
// Hierarchical initialization

// Average-linkage agglomerative clustering down to two clusters. Returns one
// label per row: 0 for the smaller cluster, 1 for the larger. Equal sizes put
// the cluster holding the lowest row index first. A single row gets label 0.
inline std::vector<int> hier_partition(const Tensor& f) {
  const std::size_t n = f.rows();
  std::vector<int> labels(n, 1);
  if (n == 0) return labels;
  if (n == 1) {
    labels[0] = 0;
    return labels;
  }

  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < f.cols(); ++c) {
        const double d = f(i, c) - f(j, c);
        s += d * d;
      }
      dist[i][j] = dist[j][i] = std::sqrt(s);
    }
  std::vector<bool> alive(n, true);
  std::size_t clusters = n;
  while (clusters > 2) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (alive[j] && dist[i][j] < best) {
          best = dist[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    // Lance-Williams update for average linkage.
    const double ni = static_cast<double>(members[bi].size());
    const double nj = static_cast<double>(members[bj].size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double d = (ni * dist[bi][k] + nj * dist[bj][k]) / (ni + nj);
      dist[bi][k] = dist[k][bi] = d;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    alive[bj] = false;
    --clusters;
  }
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i)
    if (alive[i]) roots.push_back(i);
  // roots are ordered by lowest member index already
  std::size_t small = roots[0], large = roots[1];
  if (members[large].size() < members[small].size()) std::swap(small, large);
  for (std::size_t i : members[small]) labels[i] = 0;
  for (std::size_t i : members[large]) labels[i] = 1;
  return labels;
}

inline Centroids centroids_from_partition(const Var& f, const std::vector<int>& labels) {
  std::vector<std::size_t> s_idx, l_idx;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 0 ? s_idx : l_idx).push_back(i);
  if (s_idx.empty()) s_idx = l_idx;
  if (l_idx.empty()) l_idx = s_idx;
  return {ad::mean_rows(ad::select_rows(f, s_idx)), ad::mean_rows(ad::select_rows(f, l_idx))};
}

// Initial centroids as means of the hierarchical partition. The partition is
// discrete; gradients flow through the means only.
inline Centroids hier_init(const Var& f) {
  validate_features(f.value());
  return centroids_from_partition(f, hier_partition(f.value()));
}

// ---------------------------------------------------------------------------
// Soft two-means

struct SoftTwoMeansOptions {
  int iters = 20;
  double tol = 1e-6;  // stop once both centroids move less than this
};

inline FieldState soft_two_means(const Var& f, const Centroids& init, SoftTwoMeansOptions opts = {}) {
  validate_features(f.value());
  if (opts.iters < 1) throw std::invalid_argument("soft_two_means: iters must be >= 1");
  Var c_s = init.small, c_l = init.large;
  Var a_s, a_l;
  for (int it = 0; it < opts.iters; ++it) {
    const Var d_s = ad::row_distances(f, c_s);
    const Var d_l = ad::row_distances(f, c_l);
    const Var assign = ad::softmax_rows(ad::concat_cols({-d_s, -d_l}));
    a_s = ad::slice_cols(assign, 0, 1);
    a_l = ad::slice_cols(assign, 1, 2);
    const Var next_s = ad::sum_rows(a_s * f) / ad::sum(a_s);
    const Var next_l = ad::sum_rows(a_l * f) / ad::sum(a_l);
    double move = 0.0;
    for (std::size_t c = 0; c < f.cols(); ++c) {
      move = std::max(move, std::abs(next_s(0, c) - c_s(0, c)));
      move = std::max(move, std::abs(next_l(0, c) - c_l(0, c)));
    }
    c_s = next_s;
    c_l = next_l;
    if (move < opts.tol) break;
  }
  return {c_s, c_l, a_s, a_l};
}

inline SummaryFn soft_two_means_fn(SoftTwoMeansOptions opts = {}) {
  return [opts](const Var& f, const Centroids& init) { return soft_two_means(f, init, opts); };
}

// ---------------------------------------------------------------------------
// Attention clustering

// Per-head projections for the clustering attention layer. Values are
// projected per head, concatenated and recombined by out (heads*head_dim x C).
struct AttentionParams {
  std::vector<Var> query, key, value;  // each (C x head_dim)
  Var out;                             // (heads*head_dim x C)

  std::size_t heads() const { return query.size(); }
  std::size_t head_dim() const { return query.empty() ? 0 : query[0].cols(); }
  std::size_t input_dim() const { return query.empty() ? 0 : query[0].rows(); }

  std::vector<Var> all() const {
    std::vector<Var> v;
    v.insert(v.end(), query.begin(), query.end());
    v.insert(v.end(), key.begin(), key.end());
    v.insert(v.end(), value.begin(), value.end());
    v.push_back(out);
    return v;
  }

  static AttentionParams identity(std::size_t dim, bool requires_grad = false) {
    AttentionParams p;
    p.query.emplace_back(Tensor::identity(dim), requires_grad);
    p.key.emplace_back(Tensor::identity(dim), requires_grad);
    p.value.emplace_back(Tensor::identity(dim), requires_grad);
    p.out = Var(Tensor::identity(dim), requires_grad);
    return p;
  }

  static AttentionParams zeros(std::size_t dim, std::size_t heads, std::size_t head_dim,
                               bool requires_grad = false) {
    AttentionParams p;
    for (std::size_t h = 0; h < heads; ++h) {
      p.query.emplace_back(Tensor(dim, head_dim), requires_grad);
      p.key.emplace_back(Tensor(dim, head_dim), requires_grad);
      p.value.emplace_back(Tensor(dim, head_dim), requires_grad);
    }
    p.out = Var(Tensor(heads * head_dim, dim), requires_grad);
    return p;
  }

  template <typename Rng>
  static AttentionParams random(std::size_t dim, std::size_t heads, std::size_t head_dim, Rng& rng,
                                bool requires_grad = true) {
    auto glorot = [&](std::size_t r, std::size_t c) {
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(r + c)));
      Tensor t(r, c);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = nd(rng);
      return t;
    };
    AttentionParams p;
    for (std::size_t h = 0; h < heads; ++h) {
      p.query.emplace_back(glorot(dim, head_dim), requires_grad);
      p.key.emplace_back(glorot(dim, head_dim), requires_grad);
      p.value.emplace_back(glorot(dim, head_dim), requires_grad);
    }
    p.out = Var(glorot(heads * head_dim, dim), requires_grad);
    return p;
  }
};

// Queries are the two initial centroids, keys and values are the pair
// features. Queries and keys are taken relative to the midpoint of the two
// initial centroids, so the assignment does not depend on where the group
// sits in feature space. Sigmoid replaces the attention softmax; the
// head-averaged sigmoid map is the (2 x N) assignment, renormalized per pair
// before it is returned.
inline FieldState attention_cluster(const Var& f, const Centroids& init, const AttentionParams& params) {
  validate_features(f.value());
  const std::size_t dim = f.cols();
  if (params.heads() == 0 || params.head_dim() == 0) {
    throw std::invalid_argument("attention_cluster: need at least one head of positive width");
  }
  for (std::size_t h = 0; h < params.heads(); ++h) {
    for (const Var* w : {&params.query[h], &params.key[h], &params.value[h]}) {
      if (w->rows() != dim || w->cols() != params.head_dim()) {
        throw std::invalid_argument("attention_cluster: projection shape does not match feature dim");
      }
    }
  }
  if (params.out.rows() != params.heads() * params.head_dim() || params.out.cols() != dim) {
    throw std::invalid_argument("attention_cluster: output projection shape mismatch");
  }

  const Var mid = (init.small + init.large) * 0.5;
  const Var queries = ad::concat_rows({init.small - mid, init.large - mid});  // (2 x C)
  const Var centered = f - mid;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.head_dim()));
  Var assign;
  std::vector<Var> values;
  for (std::size_t h = 0; h < params.heads(); ++h) {
    const Var q = ad::matmul(queries, params.query[h]);
    const Var k = ad::matmul(centered, params.key[h]);
    const Var logits = ad::matmul(q, ad::transpose(k)) * inv_sqrt;  // (2 x N)
    const Var a = ad::sigmoid(logits);
    assign = assign.defined() ? assign + a : a;
    values.push_back(ad::matmul(f, params.value[h]));
  }
  assign = assign * (1.0 / static_cast<double>(params.heads()));
  const Var recombined = ad::matmul(ad::concat_cols(values), params.out);  // (N x C)
  const Var weights = assign / ad::sum_cols(assign);                      // rows sum to 1
  const Var cents = ad::matmul(weights, recombined);                       // (2 x C)

  const Var raw = ad::transpose(assign);  // (N x 2)
  const Var norm = raw / ad::sum_cols(raw);
  return {ad::row(cents, 0), ad::row(cents, 1), ad::slice_cols(norm, 0, 1), ad::slice_cols(norm, 1, 2)};
}

inline SummaryFn attention_fn(const AttentionParams& params) {
  return [params](const Var& f, const Centroids& init) { return attention_cluster(f, init, params); };
}

// ---------------------------------------------------------------------------
// Energy and difference indicators

inline double energy(const FieldState& state, std::size_t i) {
  if (i >= state.size()) throw std::out_of_range("energy: pair index out of range");
  return state.a_s(i, 0);
}

// The perturbed field's centroids are matched to the original ones by
// nearest Euclidean distance; ties keep the (s, l) order.
inline Var summary_distance(const FieldState& base, const FieldState& perturbed) {
  auto sq = [](const Var& a, const Var& b) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double d = a(0, c) - b(0, c);
      s += d * d;
    }
    return s;
  };
  const double keep = sq(base.c_s, perturbed.c_s) + sq(base.c_l, perturbed.c_l);
  const double swap = sq(base.c_s, perturbed.c_l) + sq(base.c_l, perturbed.c_s);
  const Var other = swap < keep ? ad::concat_cols({perturbed.c_l, perturbed.c_s}) : perturbed.summary();
  return ad::l2_norm(base.summary() - other);
}

struct Indicator {
  Var values;  // (N x 1), nonnegative
  bool degenerate = false;
};

// Leave-one-out change of the field summary. Needs N >= 3; smaller groups
// return zeros flagged degenerate.
inline Indicator removal_indicator(const Var& f, const Centroids& init, const FieldState& base,
                                   const SummaryFn& g) {
  const std::size_t n = f.rows();
  if (n < 3) return {ad::constant(Tensor(n, 1)), true};
  std::vector<Var> parts;
  parts.reserve(n);
  std::vector<std::size_t> idx(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) idx[k++] = j;
    parts.push_back(summary_distance(base, g(ad::select_rows(f, idx), init)));
  }
  return {ad::concat_rows(parts), false};
}

// Change of the field summary when pair i is replaced by the mean pair
// (mean over all N rows, including i).
inline Indicator modification_indicator(const Var& f, const Centroids& init, const FieldState& base,
                                        const SummaryFn& g) {
  const std::size_t n = f.rows();
  if (n < 2) return {ad::constant(Tensor(n, 1)), true};
  const Var mean = ad::mean_rows(f);
  std::vector<Var> parts;
  parts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Var> rows;
    if (i > 0) {
      std::vector<std::size_t> head(i);
      std::iota(head.begin(), head.end(), 0);
      rows.push_back(ad::select_rows(f, head));
    }
    rows.push_back(mean);
    if (i + 1 < n) {
      std::vector<std::size_t> tail(n - i - 1);
      std::iota(tail.begin(), tail.end(), i + 1);
      rows.push_back(ad::select_rows(f, tail));
    }
    parts.push_back(summary_distance(base, g(ad::concat_rows(rows), init)));
  }
  return {ad::concat_rows(parts), false};
}

inline Indicator removal_indicator(const Var& f, const SummaryFn& g) {
  const Centroids init = hier_init(f);
  return removal_indicator(f, init, g(f, init), g);
}

inline Indicator modification_indicator(const Var& f, const SummaryFn& g) {
  const Centroids init = hier_init(f);
  return modification_indicator(f, init, g(f, init), g);
}

// S_b = (A_s + sigma(D_r) + sigma(D_m) - 1) / 2, elementwise.
inline Var interactiveness_score(const Var& a_s, const Var& d_r, const Var& d_m) {
  if (!a_s.value().same_shape(d_r.value()) || !a_s.value().same_shape(d_m.value())) {
    throw std::invalid_argument("interactiveness_score: inputs must have the same shape");
  }
  for (const Var* d : {&d_r, &d_m})
    for (double v : d->value().data())
      if (v < 0.0) throw std::invalid_argument("interactiveness_score: negative difference indicator");
  return (a_s + ad::sigmoid(d_r) + ad::sigmoid(d_m) - 1.0) * 0.5;
}

inline std::vector<double> interactiveness_score(const std::vector<double>& a_s, const std::vector<double>& d_r,
                                                 const std::vector<double>& d_m) {
  const Var s = interactiveness_score(ad::constant(Tensor::column_vector(a_s)),
                                      ad::constant(Tensor::column_vector(d_r)),
                                      ad::constant(Tensor::column_vector(d_m)));
  return s.value().vec();
}

// ---------------------------------------------------------------------------
// Whole-group evaluation

struct FieldOutputs {
  FieldState state;  // oriented so that c_s / A_s is the minority cluster
  Indicator removal;
  Indicator modification;
  bool degenerate = false;  // single-pair group
  bool swapped = false;     // roles flipped relative to the hierarchical order
};

// The cluster with the smaller total assignment is the minority; ties keep s.
inline FieldState orient_minority(const FieldState& s, bool* swapped = nullptr) {
  const bool flip = s.mass_l() < s.mass_s();
  if (swapped) *swapped = flip;
  return flip ? s.swapped() : s;
}

inline FieldOutputs evaluate_field(const Var& f, const SummaryFn& g) {
  validate_features(f.value());
  const std::size_t n = f.rows();
  FieldOutputs out;
  if (n == 1) {
    const Var half = ad::constant(Tensor(1, 1, 0.5));
    out.state = {ad::detach(f), ad::detach(f), half, half};
    out.removal = {ad::constant(Tensor(1, 1)), true};
    out.modification = {ad::constant(Tensor(1, 1)), true};
    out.degenerate = true;
    return out;
  }
  const Centroids init = hier_init(f);
  const FieldState base = g(f, init);
  out.removal = removal_indicator(f, init, base, g);
  out.modification = modification_indicator(f, init, base, g);
  out.state = orient_minority(base, &out.swapped);
  return out;
}

}  // namespace ifield::field
