#pragma once

// Three-stage training of the toy pair model and inference.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "ifield/geometry.hpp"
#include "ifield/losses.hpp"
#include "ifield/matching.hpp"
#include "ifield/model.hpp"
#include "ifield/synth.hpp"

namespace ifield::train {

using ad::Var;
using model::FieldMode;

inline constexpr int kStages = 3;

// Training weights for the field terms. The unit weights of LossWeights let
// the rank terms grow without bound on geometric scenes (the output
// projection of the attention layer only receives rank gradient), so they
// are scaled down here.
inline losses::LossWeights calibrated_weights() {
  losses::LossWeights w;
  w.lambda4 = 0.1;
  w.lambda6 = 0.1;
  w.lambda_r = 0.001;
  return w;
}

struct TrainConfig {
  std::array<int, kStages> epochs{30, 9, 15};
  std::array<double, kStages> lr{2e-3, 1e-3, 1e-3};
  double lr_decay = 0.1;
  // Decay point as a fraction of each stage's epochs.
  double decay_at = 2.0 / 3.0;
  std::size_t batch = 8;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  losses::LossWeights weights = calibrated_weights();
  FieldMode field_mode = FieldMode::kFull;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t hidden = 64;
  std::size_t feature_dim = 16;
  std::size_t heads = 2;
  std::size_t head_dim = 4;

  void validate() const {
    for (int s = 0; s < kStages; ++s) {
      if (epochs[s] < 0) throw ConfigError("train.epochs" + std::to_string(s + 1), "must be >= 0");
      if (!(lr[s] >= 0.0) || !std::isfinite(lr[s])) throw ConfigError("train.lr" + std::to_string(s + 1), "must be >= 0");
    }
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("train.lr_decay", "must be in (0, 1]");
    if (!(decay_at > 0.0) || decay_at > 1.0) throw ConfigError("train.decay_at", "must be in (0, 1]");
    if (batch < 1) throw ConfigError("train.batch", "must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps", "must be > 0");
    if (threads < 1) throw ConfigError("threads", "must be >= 1");
    try {
      weights.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("loss", e.what());
    }
  }

  double lr_at(int stage, int epoch) const {
    const int s = stage - 1;
    const int decay_epoch = static_cast<int>(std::floor(decay_at * epochs[s]));
    return epoch >= decay_epoch && epochs[s] > 1 ? lr[s] * lr_decay : lr[s];
  }
};

inline model::Architecture architecture_for(const synth::GeneratorConfig& g, const TrainConfig& t) {
  model::Architecture a;
  a.input_dim = synth::descriptor_dim(g);
  a.hidden = t.hidden;
  a.feature_dim = t.feature_dim;
  a.classes = static_cast<std::size_t>(g.classes);
  a.verbs = static_cast<std::size_t>(g.verbs);
  a.heads = t.heads;
  a.head_dim = t.head_dim;
  return a;
}

// A scene and its candidate grid.
struct Example {
  Scene scene;
  synth::Candidates cand;
};

inline std::vector<Example> make_examples(const std::vector<Scene>& scenes, const synth::GeneratorConfig& g) {
  std::vector<Example> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back({s, synth::make_candidates(s, g)});
  return out;
}

// ---------------------------------------------------------------------------
// Per-scene loss

struct LossRecord {
  double total = 0, pair = 0, field = 0, verb = 0, fc = 0;
  LossRecord& operator+=(const LossRecord& o) {
    total += o.total, pair += o.pair, field += o.field, verb += o.verb, fc += o.fc;
    return *this;
  }
  LossRecord scaled(double s) const { return {total * s, pair * s, field * s, verb * s, fc * s}; }
};

struct SceneLoss {
  Var total;
  LossRecord record;
  matching::LabelAssignment labels;
};

inline std::vector<matching::MatchablePrediction> matchable(const model::Forward& fw) {
  const Tensor probs = ad::softmax_rows(ad::detach(fw.class_logits)).value();
  std::vector<matching::MatchablePrediction> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      out[i].human[k] = fw.human_boxes(i, k);
      out[i].object[k] = fw.object_boxes(i, k);
    }
    out[i].class_probs.assign(probs.row(i).begin(), probs.row(i).end());
  }
  return out;
}

inline Var bce_logits(const Var& logits, const std::vector<int>& labels) {
  Tensor y(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) y(i, 0) = labels[i] ? 1.0 : 0.0;
  return losses::verb_loss(logits, y);
}

// stage 1: L_pair; stage 2 adds the interactiveness module; stage 3 the verbs.
inline SceneLoss scene_loss(const model::Leaves& p, const model::Architecture& a, FieldMode mode, int stage,
                            const Example& ex, const losses::LossWeights& w) {
  const FieldMode active = stage >= 2 ? mode : FieldMode::kNone;
  const model::Forward fw = model::forward(p, a, active, ex.cand, stage >= 3);
  SceneLoss out;
  out.labels = matching::assign_labels(ex.scene, matchable(fw), ex.cand.group_of, w);
  const auto& targets = out.labels.targets;
  const std::size_t n = ex.cand.size();

  losses::PairTargets pt;
  pt.class_targets.resize(n);
  std::vector<std::size_t> matched;
  for (std::size_t i = 0; i < n; ++i) {
    pt.class_targets[i] = targets[i].class_target;
    if (targets[i].interactive) matched.push_back(i);
  }
  pt.matched = matched;
  pt.human_boxes = Tensor(matched.size(), 4);
  pt.object_boxes = Tensor(matched.size(), 4);
  for (std::size_t r = 0; r < matched.size(); ++r)
    for (std::size_t k = 0; k < 4; ++k) {
      pt.human_boxes(r, k) = targets[matched[r]].human_box.coords()[k];
      pt.object_boxes(r, k) = targets[matched[r]].object_box.coords()[k];
    }
  const Var l_pair = losses::pair_loss(losses::pair_loss_terms(fw.human_boxes, fw.object_boxes, fw.class_logits, pt), w);
  out.record.pair = l_pair.item();
  Var total = l_pair;

  if (model::uses_field(active)) {
    std::vector<Var> group_losses;
    for (std::size_t g = 0; g < fw.fields.size(); ++g) {
      const auto& f = fw.fields[g].out;
      if (f.degenerate) continue;
      std::vector<int> labels;
      for (std::size_t r : ex.cand.groups[g].members) labels.push_back(targets[r].interactive ? 1 : 0);
      const auto terms = losses::field_loss_terms(f.state.a_s, f.state.a_l, f.removal.values, f.modification.values,
                                                  active == FieldMode::kFull ? &labels : nullptr);
      group_losses.push_back(losses::field_loss(terms, w));
    }
    if (!group_losses.empty()) {
      Var sum = group_losses[0];
      for (std::size_t g = 1; g < group_losses.size(); ++g) sum = sum + group_losses[g];
      const Var l_field = sum * (1.0 / static_cast<double>(group_losses.size()));
      out.record.field = l_field.item();
      total = total + l_field;
    }
  } else if (active == FieldMode::kFc) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = targets[i].interactive ? 1 : 0;
    const Var l_fc = bce_logits(fw.fc_logits, labels);
    out.record.fc = l_fc.item();
    total = total + l_fc;
  }

  if (stage >= 3) {
    Tensor vt(n, a.verbs);
    for (std::size_t i = 0; i < n; ++i)
      for (int v : targets[i].verbs) vt(i, static_cast<std::size_t>(v)) = 1.0;
    const Var l_verb = losses::verb_loss(fw.verb_logits, vt);
    out.record.verb = l_verb.item();
    total = total + l_verb;
  }
  out.total = total;
  out.record.total = total.item();
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam with decoupled weight decay. Parameters that received no gradient in a
// step are left untouched, moments included.
class AdamW {
 public:
  AdamW(const model::ParamMap& params, double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& [k, v] : params) {
      m_[k] = Tensor(v.rows(), v.cols());
      v_[k] = Tensor(v.rows(), v.cols());
      t_[k] = 0;
    }
  }

  void step(model::ParamMap& params, const std::map<std::string, Tensor>& grads, double lr) {
    for (const auto& [k, g] : grads) {
      Tensor& p = params.at(k);
      Tensor& m = m_.at(k);
      Tensor& v = v_.at(k);
      const int t = ++t_.at(k);
      const double c1 = 1.0 - std::pow(beta1_, t), c2 = 1.0 - std::pow(beta2_, t);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * p[i]);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_, wd_;
  std::map<std::string, Tensor> m_, v_;
  std::map<std::string, int> t_;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double lr = 0.0;
  LossRecord mean;
  double wall_seconds = 0.0;
};

struct Model {
  model::Architecture arch;
  FieldMode mode = FieldMode::kFull;
  model::ParamMap params;
};

inline Model init_model(const synth::GeneratorConfig& g, const TrainConfig& t) {
  Model m;
  m.arch = architecture_for(g, t);
  m.mode = t.field_mode;
  m.params = model::init_params(m.arch, t.seed);
  return m;
}

inline void check_finite(const model::ParamMap& p, int stage, int epoch) {
  for (const auto& [k, v] : p)
    if (!v.all_finite()) {
      throw TrainingDiverged("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                             ": parameter '" + k + "' became non-finite");
    }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains one stage in place. Gradients of a batch are summed in scene order,
// so the result does not depend on the thread count.
inline std::vector<EpochRecord> train_stage(Model& m, int stage, const std::vector<Example>& data,
                                            const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (stage < 1 || stage > kStages) throw ConfigError("stages", "stage must be 1, 2 or 3");
  if (data.empty()) throw DataError("training set is empty");
  std::vector<EpochRecord> log;
  AdamW opt(m.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs[static_cast<std::size_t>(stage - 1)]; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(synth::splitmix64(cfg.seed * 131 + static_cast<std::uint64_t>(stage) * 7919 +
                                          static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(stage, epoch);
    LossRecord sum;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, order.size() - start);
      std::vector<std::map<std::string, Tensor>> grads(count);
      std::vector<LossRecord> records(count);
      parallel_for(count, cfg.threads, [&](std::size_t b) {
        const Example& ex = data[order[start + b]];
        const model::Leaves leaves = model::Leaves::make(m.params, true);
        const SceneLoss sl = scene_loss(leaves, m.arch, m.mode, stage, ex, cfg.weights);
        if (!std::isfinite(sl.record.total)) {
          throw TrainingDiverged("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                                 ": non-finite loss on scene " + std::to_string(ex.scene.seed));
        }
        ad::backward(sl.total);
        for (const auto& [k, v] : leaves.vars)
          if (v.has_grad()) grads[b].emplace(k, v.grad());
        records[b] = sl.record;
      });
      std::map<std::string, Tensor> total;
      for (std::size_t b = 0; b < count; ++b) {
        for (auto& [k, g] : grads[b]) {
          auto it = total.find(k);
          if (it == total.end()) total.emplace(k, std::move(g));
          else it->second += g;
        }
        sum += records[b];
      }
      for (auto& [k, g] : total)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= static_cast<double>(count);
      opt.step(m.params, total, lr);
      check_finite(m.params, stage, epoch);
    }
    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.mean = sum.scaled(1.0 / static_cast<double>(data.size()));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Inference

enum class Scoring {
  kDefault,  // S = S_v * S_b when an interactiveness score exists
  kVerbOnly  // S = S_v; the w/o S_b ablation
};

struct GroupCount {
  std::size_t scene = 0;
  int group = 0;
  Regime regime = Regime::kMinority;
  int n_t = 0;
  double predicted = 0.0;  // sum of the interactive-designated assignment
};

struct ScenePrediction {
  std::vector<PairCandidate> pairs;  // after NMS, descending score
  std::vector<GroupCount> counts;
};

inline ScenePrediction predict(const Model& m, const Example& ex, std::size_t scene_index,
                               Scoring scoring = Scoring::kDefault, double nms_threshold = kDefaultNmsThreshold) {
  const model::Leaves leaves = model::Leaves::make(m.params, false);
  const model::Forward fw = model::forward(leaves, m.arch, m.mode, ex.cand, true);
  const std::size_t n = ex.cand.size();
  const Tensor probs = ad::softmax_rows(fw.class_logits).value();
  const Tensor verbs = ad::sigmoid(fw.verb_logits).value();

  std::vector<std::optional<double>> s_b(n), a_int(n);
  if (model::uses_field(m.mode)) {
    for (std::size_t g = 0; g < fw.fields.size(); ++g) {
      const auto& f = fw.fields[g].out;
      const Tensor sb = field::interactiveness_score(f.state.a_s, f.removal.values, f.modification.values).value();
      const auto& rows = ex.cand.groups[g].members;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        s_b[rows[i]] = sb(i, 0);
        a_int[rows[i]] = f.state.a_s(i, 0);
      }
    }
  } else if (m.mode == FieldMode::kFc) {
    const Tensor p = ad::sigmoid(fw.fc_logits).value();
    for (std::size_t i = 0; i < n; ++i) s_b[i] = a_int[i] = p(i, 0);
  }

  ScenePrediction out;
  if (m.mode != FieldMode::kNone) {
    for (std::size_t g = 0; g < ex.cand.groups.size(); ++g) {
      GroupCount gc;
      gc.scene = scene_index;
      gc.group = static_cast<int>(g);
      gc.regime = ex.scene.regime;
      for (std::size_t r : ex.cand.groups[g].members) {
        gc.n_t += ex.cand.interactive[r];
        gc.predicted += *a_int[r];
      }
      out.counts.push_back(gc);
    }
  }

  std::vector<PairCandidate> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    PairCandidate& pc = pairs[i];
    pc.scene = scene_index;
    pc.human = ex.cand.human[i];
    pc.object = ex.cand.object[i];
    pc.human_box = Box::clipped(fw.human_boxes(i, 0), fw.human_boxes(i, 1), fw.human_boxes(i, 2), fw.human_boxes(i, 3));
    pc.object_box =
        Box::clipped(fw.object_boxes(i, 0), fw.object_boxes(i, 1), fw.object_boxes(i, 2), fw.object_boxes(i, 3));
    std::size_t best = 0;
    for (std::size_t k = 1; k < m.arch.classes; ++k)
      if (probs(i, k) > probs(i, best)) best = k;
    pc.object_class = static_cast<int>(best);
    pc.feature.assign(fw.features.value().row(i).begin(), fw.features.value().row(i).end());
    pc.group = ex.cand.group_of[i];
    pc.verb_scores.assign(verbs.row(i).begin(), verbs.row(i).end());
    if (scoring == Scoring::kDefault) pc.interactiveness = s_b[i];
    if (model::uses_field(m.mode)) pc.energy = a_int[i];
    pc.final_scores = pc.verb_scores;
    if (pc.interactiveness)
      for (double& s : pc.final_scores) s *= *pc.interactiveness;
    pc.score = *std::max_element(pc.final_scores.begin(), pc.final_scores.end());
  }
  out.pairs = pairwise_nms(pairs, nms_threshold);
  return out;
}

struct Predictions {
  std::vector<PairCandidate> pairs;  // scene order, NMS applied per scene
  std::vector<GroupCount> counts;
};

inline Predictions predict_all(const Model& m, const std::vector<Example>& data, Scoring scoring = Scoring::kDefault,
                               double nms_threshold = kDefaultNmsThreshold, unsigned threads = 1) {
  std::vector<ScenePrediction> per(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { per[i] = predict(m, data[i], i, scoring, nms_threshold); });
  Predictions out;
  for (auto& p : per) {
    out.pairs.insert(out.pairs.end(), p.pairs.begin(), p.pairs.end());
    out.counts.insert(out.counts.end(), p.counts.begin(), p.counts.end());
  }
  return out;
}

}  // namespace ifield::train
