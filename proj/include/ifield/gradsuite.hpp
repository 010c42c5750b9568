#pragma once

// Randomized finite-difference suite over every loss and the attention field.

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "ifield/autodiff.hpp"
#include "ifield/field.hpp"
#include "ifield/gradcheck.hpp"
#include "ifield/losses.hpp"

namespace ifield::gradsuite {

using ad::Var;

inline constexpr double kTolerance = 1e-4;
inline constexpr double kStep = 1e-5;

struct SuiteOptions {
  int configs = 100;
  std::uint64_t seed = 2024;
  std::size_t n_min = 3, n_max = 16;
  std::size_t c_min = 4, c_max = 16;
  // Routes every checked function through an op whose backward is wrong.
  bool plant_defect = false;
};

struct CheckRecord {
  int config = 0;
  std::string name;
  std::size_t n = 0, c = 0;
  ad::GradcheckReport report;
};

struct SuiteResult {
  std::vector<CheckRecord> checks;
  double max_rel_err = 0.0;
  double seconds = 0.0;
  std::size_t failures = 0;
  bool pass() const { return failures == 0 && !checks.empty(); }
};

namespace detail {

// y = x^2 with a backward of 4x.
inline Var planted_square(const Var& x) {
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return ad::detail::make_op(std::move(out), {x}, [](ad::Node& n) {
    Tensor& g = ad::detail::pgrad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * 4.0 * ad::detail::pval(n, 0)[i];
  });
}

inline Tensor uniform(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline Tensor normal(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = nd(rng);
  return t;
}

// Boxes with x1 < x2, y1 < y2 well inside the image.
inline Tensor boxes(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.45), s(0.1, 0.45);
  Tensor t(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    t(i, 0) = u(rng);
    t(i, 1) = u(rng);
    t(i, 2) = t(i, 0) + s(rng);
    t(i, 3) = t(i, 1) + s(rng);
  }
  return t;
}

}  // namespace detail

inline SuiteResult run(const SuiteOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res;
  std::mt19937_64 rng(opt.seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  auto finish = [&](const Var& y) { return opt.plant_defect ? detail::planted_square(y) : y; };
  auto record = [&](int cfg, const char* name, std::size_t n, std::size_t c, const ad::GradcheckReport& r) {
    res.checks.push_back({cfg, name, n, c, r});
    res.max_rel_err = std::max(res.max_rel_err, r.max_rel_err);
    if (!r.pass) ++res.failures;
  };

  for (int k = 0; k < opt.configs; ++k) {
    const std::size_t n = pick(opt.n_min, opt.n_max);
    const std::size_t c = pick(opt.c_min, opt.c_max);

    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng() % 2);
    labels[0] = 1;  // at least one interactive pair
    labels[1] = 0;
    const Tensor a_s = detail::uniform(n, 1, rng, 0.05, 0.95);
    const Tensor d_r = detail::uniform(n, 1, rng, 0.0, 2.0);
    const Tensor d_m = detail::uniform(n, 1, rng, 0.0, 2.0);

    losses::LossWeights w;
    record(k, "field_loss_supervised", n, c,
           ad::gradcheck(
               [&](const std::vector<Var>& v) {
                 return finish(losses::field_loss(losses::field_loss_terms(v[0], 1.0 - v[0], v[1], v[2], &labels), w));
               },
               {a_s, d_r, d_m}, kStep, kTolerance));
    record(k, "field_loss_unsupervised", n, c,
           ad::gradcheck(
               [&](const std::vector<Var>& v) {
                 return finish(losses::field_loss(losses::field_loss_terms(v[0], 1.0 - v[0], v[1], v[2], nullptr), w));
               },
               {a_s, d_r, d_m}, kStep, kTolerance));

    // Pair detection loss on n predictions with c object classes.
    losses::PairTargets pt;
    pt.class_targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i]) {
        pt.matched.push_back(i);
        pt.class_targets[i] = static_cast<int>(rng() % c);
      } else {
        pt.class_targets[i] = static_cast<int>(c);
      }
    }
    pt.human_boxes = detail::boxes(pt.matched.size(), rng);
    pt.object_boxes = detail::boxes(pt.matched.size(), rng);
    record(k, "pair_loss", n, c,
           ad::gradcheck(
               [&](const std::vector<Var>& v) {
                 return finish(losses::pair_loss(losses::pair_loss_terms(v[0], v[1], v[2], pt), w));
               },
               {detail::boxes(n, rng), detail::boxes(n, rng), detail::normal(n, c + 1, rng)}, kStep, kTolerance));

    Tensor verb_targets(n, c);
    for (std::size_t i = 0; i < verb_targets.size(); ++i) verb_targets[i] = static_cast<double>(rng() % 2);
    record(k, "verb_loss", n, c,
           ad::gradcheck([&](const Var& x) { return finish(losses::verb_loss(x, verb_targets)); },
                         detail::normal(n, c, rng, 2.0), kStep, kTolerance));

    // Attention field forward, differentiated through features and weights.
    // The hierarchical initialization is piecewise constant, so it is frozen.
    const std::size_t heads = 2, head_dim = 2;
    const auto p0 = field::AttentionParams::random(c, heads, head_dim, rng, false);
    Tensor f = detail::normal(n, c, rng);
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i])
        for (std::size_t j = 0; j < c; ++j) f(i, j) += 2.0;
    const field::Centroids init0 = field::hier_init(ad::constant(f));
    std::vector<Tensor> inputs{f};
    for (const auto& v : p0.all()) inputs.push_back(v.value());
    record(k, "attention_cluster", n, c,
           ad::gradcheck(
               [&](const std::vector<Var>& v) {
                 field::AttentionParams p;
                 for (std::size_t h = 0; h < heads; ++h) {
                   p.query.push_back(v[1 + h]);
                   p.key.push_back(v[1 + heads + h]);
                   p.value.push_back(v[1 + 2 * heads + h]);
                 }
                 p.out = v[1 + 3 * heads];
                 const field::Centroids init{ad::constant(init0.small.value()), ad::constant(init0.large.value())};
                 const field::FieldState s = field::attention_cluster(v[0], init, p);
                 return finish(ad::sum(s.a_s * s.a_s) + ad::l2_norm(s.summary()));
               },
               inputs, kStep, kTolerance));
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace ifield::gradsuite
