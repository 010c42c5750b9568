#pragma once

// Synthetic scenes with a controllable per-object interactive ratio.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ifield/geometry.hpp"
#include "ifield/scene.hpp"
#include "ifield/tensor.hpp"
#include "ifield/types.hpp"

namespace ifield::synth {

enum class FeatureMode { kGeometric, kOracle };

inline const char* feature_mode_name(FeatureMode m) { return m == FeatureMode::kOracle ? "oracle" : "geometric"; }

inline FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "geometric") return FeatureMode::kGeometric;
  if (s == "oracle") return FeatureMode::kOracle;
  throw ConfigError("synth.feature_mode", "expected 'geometric' or 'oracle', got '" + s + "'");
}

// HICO-DET-like regime mixture.
inline constexpr std::array<double, kRegimeCount> kDefaultMixture{0.791, 0.073, 0.136};

struct GeneratorConfig {
  std::array<double, kRegimeCount> mixture = kDefaultMixture;
  int humans_min = 2, humans_max = 8;
  int objects_min = 1, objects_max = 4;
  int classes = 4;
  int verbs = 4;
  int feature_dim = 8;           // oracle feature width
  double separation = 6.0;       // ||mu_I - mu_N|| in units of feature_std
  double feature_std = 3.0;
  FeatureMode mode = FeatureMode::kGeometric;
  std::uint64_t seed = 1;
  std::uint64_t feature_seed = 7;  // per-class oracle means; shared across splits
  // Per-scene layout scale; box sizes do not depend on it, so a single pair
  // says little about the scale of its scene.
  double spread_min = 0.04, spread_max = 0.8;
  double human_w_min = 0.03, human_w_max = 0.06;
  double human_h_min = 0.08, human_h_max = 0.15;
  double object_min = 0.03, object_max = 0.08;
  double jitter = 0.002;  // candidate box noise
  // In units of the scene scale: interactive humans sit in a ring
  // [near_radius / 2, near_radius] around their objects, the others in a ring
  // [far_min, far_max] around some object.
  double near_radius = 0.25;
  double far_min = 0.6, far_max = 0.9;

  void validate() const {
    double total = 0.0;
    for (double w : mixture) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("synth.mixture", "weights must be finite and >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synth.mixture", "weights must sum to 1");
    if (humans_min < 1 || humans_max < humans_min) throw ConfigError("synth.humans_min", "need 1 <= min <= max");
    if (objects_min < 1 || objects_max < objects_min) throw ConfigError("synth.objects_min", "need 1 <= min <= max");
    if (classes < 1) throw ConfigError("synth.classes", "need at least one object class");
    if (verbs < 2) throw ConfigError("synth.verbs", "need at least two verbs");
    if (feature_dim < 2) throw ConfigError("synth.feature_dim", "need at least two dimensions");
    if (!(separation > 0.0)) throw ConfigError("synth.separation", "must be > 0");
    if (!(feature_std > 0.0)) throw ConfigError("synth.feature_std", "must be > 0");
    if (!(spread_min > 0.0) || spread_max < spread_min || spread_max > 1.0) {
      throw ConfigError("synth.spread_min", "need 0 < spread_min <= spread_max <= 1");
    }
    auto range = [](double lo, double hi, const char* key) {
      if (!(lo > 0.0) || hi < lo || hi > 0.5) throw ConfigError(key, "need 0 < min <= max <= 0.5");
    };
    range(human_w_min, human_w_max, "synth.human_w_min");
    range(human_h_min, human_h_max, "synth.human_h_min");
    range(object_min, object_max, "synth.object_min");
    if (!(jitter >= 0.0) || jitter > 0.05) throw ConfigError("synth.jitter", "must be within [0, 0.05]");
    if (!(near_radius > 0.0) || far_min <= near_radius || far_max < far_min) {
      throw ConfigError("synth.near_radius", "need 0 < near_radius < far_min <= far_max");
    }
    for (std::size_t r = 0; r < kRegimeCount; ++r) {
      if (mixture[r] > 0.0 && valid_human_counts(static_cast<Regime>(r)).empty()) {
        throw ConfigError("synth.humans_max", std::string("no human count supports the ") +
                                                  regime_name(static_cast<Regime>(r)) + " regime");
      }
    }
  }

  // Interactive counts n_T for one object with h humans. Every regime keeps
  // at least one pair of each kind.
  static std::vector<int> valid_interactive_counts(Regime r, int h) {
    std::vector<int> out;
    for (int n = 1; n < h; ++n)
      if (regime_for_fraction(static_cast<double>(n) / h) == r) out.push_back(n);
    return out;
  }

  std::vector<int> valid_human_counts(Regime r) const {
    std::vector<int> out;
    for (int h = humans_min; h <= humans_max; ++h)
      if (!valid_interactive_counts(r, h).empty()) out.push_back(h);
    return out;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t scene_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ index);
}

// Verb ids of an interactive pair, derived from the layout so that they are
// learnable: the direction bucket of the human relative to the object, plus a
// second verb for odd object classes.
inline std::vector<int> verbs_for(const Box& human, const Box& object, int category, int num_verbs) {
  const double ang = std::atan2(human.cy() - object.cy(), human.cx() - object.cx());
  int v1 = static_cast<int>(std::floor((ang + std::numbers::pi) / (2.0 * std::numbers::pi) * num_verbs));
  v1 = std::clamp(v1, 0, num_verbs - 1);
  std::vector<int> v{v1};
  if (category % 2 == 1) {
    const int v2 = (v1 + 1 + category % (num_verbs - 1)) % num_verbs;
    v.push_back(v2);
    if (v2 < v1) std::swap(v[0], v[1]);
  }
  return v;
}

namespace detail {

struct Point {
  double x, y;
};

inline double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline Box box_at(Point c, double w, double h) {
  const double x = std::clamp(c.x, w / 2, 1.0 - w / 2), y = std::clamp(c.y, h / 2, 1.0 - h / 2);
  return Box::clipped(x - w / 2, y - h / 2, x + w / 2, y + h / 2);
}

inline constexpr double kMaxHumanIou = 0.35;
// Desired distances, in units of the scene scale, between component roots and
// between objects of one component.
inline constexpr double kComponentGap = 1.6;
inline constexpr double kObjectGap = 0.42;

}  // namespace detail

// Layout only; candidate features are derived separately.
inline Scene generate_scene(const GeneratorConfig& cfg, std::uint64_t seed) {
  using detail::Point;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto pick = [&](const std::vector<int>& v) { return v[static_cast<std::size_t>(uniform_int(0, static_cast<int>(v.size()) - 1))]; };

  Scene s;
  s.seed = seed;
  std::discrete_distribution<int> mix(cfg.mixture.begin(), cfg.mixture.end());
  s.regime = static_cast<Regime>(mix(rng));
  const int n_h = pick(cfg.valid_human_counts(s.regime));
  const int n_o = uniform_int(cfg.objects_min, cfg.objects_max);

  // interaction sets
  std::vector<std::vector<bool>> inter(static_cast<std::size_t>(n_o), std::vector<bool>(static_cast<std::size_t>(n_h)));
  std::vector<int> categories(static_cast<std::size_t>(n_o));
  for (int o = 0; o < n_o; ++o) {
    categories[static_cast<std::size_t>(o)] = uniform_int(0, cfg.classes - 1);
    const int n_t = pick(GeneratorConfig::valid_interactive_counts(s.regime, n_h));
    std::vector<int> order(static_cast<std::size_t>(n_h));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < n_t; ++k) inter[static_cast<std::size_t>(o)][static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;
  }

  // Objects that share an interactive human form one component.
  std::vector<int> comp(static_cast<std::size_t>(n_o));
  std::iota(comp.begin(), comp.end(), 0);
  std::function<int(int)> find = [&](int x) { return comp[static_cast<std::size_t>(x)] == x ? x : comp[static_cast<std::size_t>(x)] = find(comp[static_cast<std::size_t>(x)]); };
  for (int h = 0; h < n_h; ++h) {
    int first = -1;
    for (int o = 0; o < n_o; ++o) {
      if (!inter[static_cast<std::size_t>(o)][static_cast<std::size_t>(h)]) continue;
      if (first < 0) first = o;
      else comp[static_cast<std::size_t>(find(o))] = find(first);
    }
  }

  struct Layout {
    std::vector<Box> humans;
    std::vector<Box> objects;
    int violations = std::numeric_limits<int>::max();
    bool feasible = false;
  };
  auto in_image = [](Point p) { return p.x >= 0.05 && p.x <= 0.95 && p.y >= 0.05 && p.y <= 0.95; };
  auto ring = [&](Point c, double lo, double hi) {
    const double rad = lo + (hi - lo) * u(rng), th = 2.0 * std::numbers::pi * u(rng);
    return Point{c.x + rad * std::cos(th), c.y + rad * std::sin(th)};
  };

  auto try_layout = [&](double spread, double object_gap) {
    const double near = cfg.near_radius * spread, far = cfg.far_min * spread;
    Layout lay;
    std::vector<Point> oc(static_cast<std::size_t>(n_o));
    std::vector<char> done(static_cast<std::size_t>(n_o), 0);
    std::vector<Point> roots;
    // Component roots are pushed apart; objects within a component sit about
    // kObjectGap apart, close enough to share a human yet far enough for a
    // human of one object to stay clear of the other.
    for (int o = 0; o < n_o; ++o) {
      Point best_p{0.5, 0.5};
      double best_gap = -1.0;
      const int root = find(o);
      std::vector<int> mates;
      for (int q = 0; q < o; ++q)
        if (find(q) == root) mates.push_back(q);
      for (int t = 0; t < 32; ++t) {
        Point cand;
        double gap = std::numeric_limits<double>::infinity();
        if (mates.empty()) {
          cand = {0.15 + 0.7 * u(rng), 0.15 + 0.7 * u(rng)};
          for (const Point& r : roots) gap = std::min(gap, detail::dist(cand, r) / (detail::kComponentGap * spread));
        } else {
          const Point base = oc[static_cast<std::size_t>(mates[static_cast<std::size_t>(uniform_int(0, static_cast<int>(mates.size()) - 1))])];
          cand = ring(base, 0.9 * object_gap * spread, 1.1 * object_gap * spread);
          if (!in_image(cand)) continue;
          for (int q : mates) gap = std::min(gap, detail::dist(cand, oc[static_cast<std::size_t>(q)]) / (object_gap * spread));
        }
        if (gap > best_gap) {
          best_gap = gap;
          best_p = cand;
        }
        if (gap >= 1.0) break;
      }
      oc[static_cast<std::size_t>(o)] = {std::clamp(best_p.x, 0.05, 0.95), std::clamp(best_p.y, 0.05, 0.95)};
      if (mates.empty()) roots.push_back(oc[static_cast<std::size_t>(o)]);
      const double ow = cfg.object_min + (cfg.object_max - cfg.object_min) * u(rng);
      const double oh = cfg.object_min + (cfg.object_max - cfg.object_min) * u(rng);
      lay.objects.push_back(detail::box_at(oc[static_cast<std::size_t>(o)], ow, oh));
    }
    int violations = 0;
    for (int h = 0; h < n_h; ++h) {
      std::vector<int> mine, others;
      for (int o = 0; o < n_o; ++o) (inter[static_cast<std::size_t>(o)][static_cast<std::size_t>(h)] ? mine : others).push_back(o);
      const double w = cfg.human_w_min + (cfg.human_w_max - cfg.human_w_min) * u(rng);
      const double hh = cfg.human_h_min + (cfg.human_h_max - cfg.human_h_min) * u(rng);
      double best_margin = -std::numeric_limits<double>::infinity();
      Box chosen;
      bool found = false;
      for (int t = 0; t < 200; ++t) {
        const Point p = mine.empty()
                            ? ring(oc[static_cast<std::size_t>(uniform_int(0, n_o - 1))], cfg.far_min * spread, cfg.far_max * spread)
                            : ring(oc[static_cast<std::size_t>(mine[static_cast<std::size_t>(uniform_int(0, static_cast<int>(mine.size()) - 1))])],
                                   0.5 * near, near);
        if (p.x < 0.02 || p.x > 0.98 || p.y < 0.02 || p.y > 0.98) continue;
        const Box b = detail::box_at(p, w, hh);
        const Point c{b.cx(), b.cy()};
        bool ok = true;
        for (int o : mine) ok = ok && detail::dist(c, oc[static_cast<std::size_t>(o)]) <= near;
        for (const Box& other : lay.humans) ok = ok && iou(b, other) <= detail::kMaxHumanIou;
        if (!ok) continue;
        double margin = std::numeric_limits<double>::infinity();
        for (int o : others) margin = std::min(margin, detail::dist(c, oc[static_cast<std::size_t>(o)]) - far);
        if (margin > best_margin) {
          best_margin = margin;
          chosen = b;
          found = true;
        }
        if (margin >= 0.0) break;
      }
      if (!found) return lay;
      if (best_margin < 0.0) ++violations;
      lay.humans.push_back(chosen);
    }
    lay.violations = violations;
    lay.feasible = true;
    return lay;
  };

  // The scale is redrawn only when placement stays infeasible (crowded humans
  // at a tiny scale); otherwise retries keep the scale and pull the objects of
  // a component closer, which humans shared by many objects need.
  Layout best;
  for (int draw = 0; draw < 40 && !best.feasible; ++draw) {
    const double spread = std::exp(std::log(cfg.spread_min) + u(rng) * (std::log(cfg.spread_max) - std::log(cfg.spread_min)));
    for (int attempt = 0; attempt < 8; ++attempt) {
      Layout lay = try_layout(spread, detail::kObjectGap * std::pow(0.8, attempt));
      if (!lay.feasible) continue;
      if (!best.feasible || lay.violations < best.violations) best = std::move(lay);
      if (best.violations == 0) break;
    }
  }
  if (best.humans.empty()) throw DataError("scene " + std::to_string(seed) + ": could not place humans");

  s.humans = std::move(best.humans);
  for (int o = 0; o < n_o; ++o) s.objects.push_back({best.objects[static_cast<std::size_t>(o)], categories[static_cast<std::size_t>(o)]});
  for (int h = 0; h < n_h; ++h)
    for (int o = 0; o < n_o; ++o)
      if (inter[static_cast<std::size_t>(o)][static_cast<std::size_t>(h)]) {
        const auto& obj = s.objects[static_cast<std::size_t>(o)];
        s.gt_pairs.push_back({static_cast<std::size_t>(h), static_cast<std::size_t>(o),
                              verbs_for(s.humans[static_cast<std::size_t>(h)], obj.box, obj.category, cfg.verbs)});
      }
  return s;
}

// ---------------------------------------------------------------------------
// Candidates

// Field groups: an object with at least kMinInstanceGroup candidates forms
// its own group; smaller ones are pooled with same-category objects of the scene.
inline constexpr std::size_t kMinInstanceGroup = 3;

struct Group {
  int key = 0;                       // object index for instance groups, -1 - category otherwise
  std::vector<std::size_t> members;  // candidate rows
  std::vector<std::size_t> objects;
};

struct Candidates {
  std::vector<std::size_t> human, object;  // per row
  std::vector<int> category;
  std::vector<int> interactive;  // 1 iff the (human, object) pair is a gt pair
  Tensor human_boxes, object_boxes;  // (N x 4) jittered input boxes
  Tensor descriptors;                // (N x D)
  Tensor oracle;                     // (N x feature_dim) in oracle mode, empty otherwise
  std::vector<Group> groups;
  std::vector<int> group_of;  // per row

  std::size_t size() const { return human.size(); }
};

inline std::vector<Group> make_groups(const Scene& s) {
  const std::size_t n_h = s.humans.size();
  std::vector<Group> groups;
  std::map<int, std::size_t> pooled;
  for (std::size_t o = 0; o < s.objects.size(); ++o) {
    std::vector<std::size_t> rows(n_h);
    for (std::size_t h = 0; h < n_h; ++h) rows[h] = o * n_h + h;
    if (n_h >= kMinInstanceGroup) {
      groups.push_back({static_cast<int>(o), rows, {o}});
      continue;
    }
    const int cat = s.objects[o].category;
    auto it = pooled.find(cat);
    if (it == pooled.end()) {
      pooled[cat] = groups.size();
      groups.push_back({-1 - cat, rows, {o}});
    } else {
      auto& g = groups[it->second];
      g.members.insert(g.members.end(), rows.begin(), rows.end());
      g.objects.push_back(o);
    }
  }
  return groups;
}

inline std::size_t descriptor_dim(const GeneratorConfig& cfg) {
  return 8 + static_cast<std::size_t>(cfg.classes) + 5 +
         (cfg.mode == FeatureMode::kOracle ? static_cast<std::size_t>(cfg.feature_dim) : 0);
}

// Per-class oracle means: mu_N ~ N(0, std^2 I), mu_I = mu_N + separation * std * u.
struct OracleMeans {
  std::vector<std::vector<double>> non_interactive, interactive;

  static OracleMeans make(const GeneratorConfig& cfg) {
    std::mt19937_64 rng(splitmix64(cfg.feature_seed));
    std::normal_distribution<double> nd(0.0, 1.0);
    OracleMeans m;
    const auto dim = static_cast<std::size_t>(cfg.feature_dim);
    for (int k = 0; k < cfg.classes; ++k) {
      std::vector<double> mu(dim), dir(dim);
      double norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        mu[c] = nd(rng) * cfg.feature_std;
        dir[c] = nd(rng);
        norm += dir[c] * dir[c];
      }
      norm = std::sqrt(norm);
      std::vector<double> mi(dim);
      for (std::size_t c = 0; c < dim; ++c) mi[c] = mu[c] + cfg.separation * cfg.feature_std * dir[c] / norm;
      m.non_interactive.push_back(mu);
      m.interactive.push_back(mi);
    }
    return m;
  }
};

// Full human x object candidate grid, row = object * H + human. Jitter and
// oracle noise are seeded from the scene seed, so a stored scene plus the
// config reproduces its candidates.
inline Candidates make_candidates(const Scene& s, const GeneratorConfig& cfg) {
  Candidates c;
  const std::size_t n_h = s.humans.size(), n = s.candidate_count();
  std::mt19937_64 rng(splitmix64(s.seed ^ 0xC0FFEEull));
  std::normal_distribution<double> jit(0.0, 1.0);
  c.human_boxes = Tensor(n, 4);
  c.object_boxes = Tensor(n, 4);
  c.descriptors = Tensor(n, descriptor_dim(cfg));
  const OracleMeans means = cfg.mode == FeatureMode::kOracle ? OracleMeans::make(cfg) : OracleMeans{};
  if (cfg.mode == FeatureMode::kOracle) c.oracle = Tensor(n, static_cast<std::size_t>(cfg.feature_dim));
  auto jittered = [&](const Box& b) {
    const double j = cfg.jitter;
    return Box::clipped(b.x1() + j * jit(rng), b.y1() + j * jit(rng), b.x2() + j * jit(rng), b.y2() + j * jit(rng));
  };
  for (std::size_t o = 0; o < s.objects.size(); ++o) {
    for (std::size_t h = 0; h < n_h; ++h) {
      const std::size_t r = o * n_h + h;
      c.human.push_back(h);
      c.object.push_back(o);
      c.category.push_back(s.objects[o].category);
      c.interactive.push_back(s.is_interactive(h, o) ? 1 : 0);
      const Box hb = jittered(s.humans[h]), ob = jittered(s.objects[o].box);
      for (std::size_t k = 0; k < 4; ++k) {
        c.human_boxes(r, k) = hb.coords()[k];
        c.object_boxes(r, k) = ob.coords()[k];
      }
      std::size_t col = 0;
      for (std::size_t k = 0; k < 4; ++k) c.descriptors(r, col++) = hb.coords()[k];
      for (std::size_t k = 0; k < 4; ++k) c.descriptors(r, col++) = ob.coords()[k];
      for (int k = 0; k < cfg.classes; ++k) c.descriptors(r, col++) = k == s.objects[o].category ? 1.0 : 0.0;
      const double dx = hb.cx() - ob.cx(), dy = hb.cy() - ob.cy();
      const double d = std::max(std::hypot(dx, dy), 1e-6);
      c.descriptors(r, col++) = dx;
      c.descriptors(r, col++) = dy;
      c.descriptors(r, col++) = std::log(d);
      c.descriptors(r, col++) = dx / d;
      c.descriptors(r, col++) = dy / d;
      if (cfg.mode == FeatureMode::kOracle) {
        const auto k = static_cast<std::size_t>(s.objects[o].category);
        const auto& mu = c.interactive.back() ? means.interactive[k] : means.non_interactive[k];
        for (std::size_t e = 0; e < mu.size(); ++e) {
          const double v = mu[e] + cfg.feature_std * jit(rng);
          c.oracle(r, e) = v;
          c.descriptors(r, col++) = v / cfg.feature_std;
        }
      }
    }
  }
  c.groups = make_groups(s);
  c.group_of.assign(n, -1);
  for (std::size_t g = 0; g < c.groups.size(); ++g)
    for (std::size_t r : c.groups[g].members) c.group_of[r] = static_cast<int>(g);
  return c;
}

// ---------------------------------------------------------------------------
// Datasets

struct Manifest {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::array<double, kRegimeCount> configured{};
  std::array<std::size_t, kRegimeCount> realized_counts{};
  std::size_t humans = 0, objects = 0, gt_pairs = 0, candidates = 0;

  double realized_frequency(Regime r) const {
    return count == 0 ? 0.0 : static_cast<double>(realized_counts[static_cast<std::size_t>(r)]) / static_cast<double>(count);
  }
};

inline Manifest summarize(const std::vector<Scene>& scenes, const GeneratorConfig& cfg) {
  Manifest m;
  m.count = scenes.size();
  m.seed = cfg.seed;
  m.configured = cfg.mixture;
  for (const auto& s : scenes) {
    ++m.realized_counts[static_cast<std::size_t>(s.regime)];
    m.humans += s.humans.size();
    m.objects += s.objects.size();
    m.gt_pairs += s.gt_pairs.size();
    m.candidates += s.candidate_count();
  }
  return m;
}

inline std::vector<Scene> generate_dataset(const GeneratorConfig& cfg, std::size_t count) {
  cfg.validate();
  if (count < 1) throw ConfigError("count", "must be >= 1");
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) scenes.push_back(generate_scene(cfg, scene_seed(cfg.seed, i)));
  return scenes;
}

}  // namespace ifield::synth
