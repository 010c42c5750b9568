#pragma once

// Pair encoder, detection heads, field module and verb head.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ifield/autodiff.hpp"
#include "ifield/field.hpp"
#include "ifield/synth.hpp"
#include "ifield/tensor.hpp"
#include "ifield/types.hpp"

namespace ifield::model {

using ad::Var;

// How interactiveness is modeled on top of the encoder.
//   full:  attention field with the label-bound losses
//   unsup: attention field with only the unsupervised losses
//   fc:    per-pair fully-connected classifier instead of the field
//   none:  no interactiveness module
enum class FieldMode { kFull, kUnsup, kFc, kNone };

inline const char* field_mode_name(FieldMode m) {
  switch (m) {
    case FieldMode::kFull: return "full";
    case FieldMode::kUnsup: return "unsup";
    case FieldMode::kFc: return "fc";
    case FieldMode::kNone: return "none";
  }
  return "unknown";
}

inline FieldMode parse_field_mode(const std::string& s) {
  if (s == "full") return FieldMode::kFull;
  if (s == "unsup") return FieldMode::kUnsup;
  if (s == "fc") return FieldMode::kFc;
  if (s == "none") return FieldMode::kNone;
  throw ConfigError("train.field_mode", "expected full, unsup, fc or none, got '" + s + "'");
}

inline bool uses_field(FieldMode m) { return m == FieldMode::kFull || m == FieldMode::kUnsup; }

struct Architecture {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t feature_dim = 16;
  std::size_t classes = 4;
  std::size_t verbs = 4;
  std::size_t heads = 2;
  std::size_t head_dim = 4;
  std::size_t verb_hidden = 32;

  void validate() const {
    if (input_dim == 0) throw ConfigError("model.input_dim", "must be > 0");
    if (hidden == 0) throw ConfigError("train.hidden", "must be > 0");
    if (feature_dim < 2) throw ConfigError("train.feature_dim", "must be >= 2");
    if (heads == 0 || head_dim == 0) throw ConfigError("train.heads", "heads and head_dim must be > 0");
    if (classes == 0 || verbs == 0) throw ConfigError("synth.classes", "classes and verbs must be > 0");
  }
};

// Per-pair inputs the encoder sees beyond the descriptor: the three detached
// field statistics fed to the verb head.
inline constexpr std::size_t kVerbContext = 3;

// Named parameter arrays; std::map keeps a fixed iteration order, which the
// optimizer and checkpoint rely on.
using ParamMap = std::map<std::string, Tensor>;

inline ParamMap init_params(const Architecture& a, std::uint64_t seed) {
  a.validate();
  std::mt19937_64 rng(synth::splitmix64(seed ^ 0x5EEDull));
  auto glorot = [&](std::size_t r, std::size_t c, double gain = 1.0) {
    std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / static_cast<double>(r + c)));
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = nd(rng);
    return t;
  };
  ParamMap p;
  p["enc.w1"] = glorot(a.input_dim, a.hidden);
  p["enc.b1"] = Tensor(1, a.hidden);
  p["enc.w2"] = glorot(a.hidden, a.hidden);
  p["enc.b2"] = Tensor(1, a.hidden);
  p["enc.w3"] = glorot(a.hidden, a.feature_dim);
  p["enc.b3"] = Tensor(1, a.feature_dim);
  // Box deltas start near zero so stage 1 begins from the candidate boxes.
  p["box.w"] = glorot(a.feature_dim, 8, 0.01);
  p["box.b"] = Tensor(1, 8);
  p["cls.w"] = glorot(a.feature_dim, a.classes + 1);
  p["cls.b"] = Tensor(1, a.classes + 1);
  auto att = field::AttentionParams::random(a.feature_dim, a.heads, a.head_dim, rng, false);
  for (std::size_t h = 0; h < a.heads; ++h) {
    p["att.q" + std::to_string(h)] = att.query[h].value();
    p["att.k" + std::to_string(h)] = att.key[h].value();
    p["att.v" + std::to_string(h)] = att.value[h].value();
  }
  p["att.out"] = att.out.value();
  p["fc.w"] = glorot(a.feature_dim, 1);
  p["fc.b"] = Tensor(1, 1);
  p["verb.w1"] = glorot(a.feature_dim + kVerbContext, a.verb_hidden);
  p["verb.b1"] = Tensor(1, a.verb_hidden);
  p["verb.w2"] = glorot(a.verb_hidden, a.verbs);
  p["verb.b2"] = Tensor(1, a.verbs);
  return p;
}

// Graph leaves for one forward pass.
struct Leaves {
  std::map<std::string, Var> vars;

  static Leaves make(const ParamMap& p, bool requires_grad) {
    Leaves l;
    for (const auto& [k, v] : p) l.vars.emplace(k, Var(v, requires_grad));
    return l;
  }

  const Var& operator[](const std::string& k) const {
    auto it = vars.find(k);
    if (it == vars.end()) throw CheckpointError("missing parameter '" + k + "'");
    return it->second;
  }

  field::AttentionParams attention(std::size_t heads) const {
    field::AttentionParams a;
    for (std::size_t h = 0; h < heads; ++h) {
      a.query.push_back((*this)["att.q" + std::to_string(h)]);
      a.key.push_back((*this)["att.k" + std::to_string(h)]);
      a.value.push_back((*this)["att.v" + std::to_string(h)]);
    }
    a.out = (*this)["att.out"];
    return a;
  }
};

inline Var affine(const Var& x, const Var& w, const Var& b) { return ad::matmul(x, w) + b; }

inline Var encode(const Leaves& p, const Tensor& descriptors) {
  const Var x = ad::constant(descriptors);
  const Var h1 = ad::tanh(affine(x, p["enc.w1"], p["enc.b1"]));
  const Var h2 = ad::tanh(affine(h1, p["enc.w2"], p["enc.b2"]));
  return ad::tanh(affine(h2, p["enc.w3"], p["enc.b3"]));
}

struct GroupField {
  field::FieldOutputs out;
  Var features;
};

struct Forward {
  Var features;      // (N x C)
  Var human_boxes;   // (N x 4)
  Var object_boxes;  // (N x 4)
  Var class_logits;  // (N x K+1)
  Var fc_logits;     // (N x 1), fc mode only
  std::vector<GroupField> fields;  // per candidate group, field modes only
  Tensor context;    // (N x 3) detached verb-head context
  Var verb_logits;   // (N x V), when requested
};

// Minority-oriented field statistics for every candidate; 0.5 everywhere for
// groups that cannot form a field.
inline Tensor field_context(const synth::Candidates& c, const std::vector<GroupField>& fields) {
  Tensor ctx(c.size(), kVerbContext, 0.5);
  for (std::size_t g = 0; g < fields.size(); ++g) {
    const auto& f = fields[g].out;
    if (f.degenerate) continue;
    const auto& rows = c.groups[g].members;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ctx(rows[i], 0) = f.state.a_s(i, 0);
      ctx(rows[i], 1) = ad::sigmoid_value(f.removal.values(i, 0));
      ctx(rows[i], 2) = ad::sigmoid_value(f.modification.values(i, 0));
    }
  }
  return ctx;
}

inline Forward forward(const Leaves& p, const Architecture& a, FieldMode mode, const synth::Candidates& c,
                       bool with_verbs) {
  Forward out;
  out.features = encode(p, c.descriptors);
  const Var deltas = affine(out.features, p["box.w"], p["box.b"]);
  out.human_boxes = ad::constant(c.human_boxes) + ad::slice_cols(deltas, 0, 4);
  out.object_boxes = ad::constant(c.object_boxes) + ad::slice_cols(deltas, 4, 8);
  out.class_logits = affine(out.features, p["cls.w"], p["cls.b"]);
  if (mode == FieldMode::kFc) out.fc_logits = affine(out.features, p["fc.w"], p["fc.b"]);
  if (uses_field(mode)) {
    const auto g = field::attention_fn(p.attention(a.heads));
    for (const auto& grp : c.groups) {
      const Var f = ad::select_rows(out.features, grp.members);
      out.fields.push_back({field::evaluate_field(f, g), f});
    }
    out.context = field_context(c, out.fields);
  } else {
    // Without a field the verb head sees a constant context.
    out.context = Tensor(c.size(), kVerbContext, 0.0);
  }
  if (with_verbs) {
    const Var in = ad::concat_cols({out.features, ad::constant(out.context)});
    const Var h = ad::tanh(affine(in, p["verb.w1"], p["verb.b1"]));
    out.verb_logits = affine(h, p["verb.w2"], p["verb.b2"]);
  }
  return out;
}

}  // namespace ifield::model
