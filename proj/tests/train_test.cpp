#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ifield/train.hpp"

namespace ifield::train {
namespace {

TrainConfig small_config() {
  TrainConfig t;
  t.epochs = {3, 2, 2};
  t.hidden = 16;
  t.feature_dim = 8;
  t.batch = 4;
  return t;
}

const std::vector<Example>& small_data() {
  static const std::vector<Example> data = [] {
    synth::GeneratorConfig g;
    g.seed = 41;
    return make_examples(synth::generate_dataset(g, 12), g);
  }();
  return data;
}

bool same_params(const model::ParamMap& a, const model::ParamMap& b, const std::string& prefix = "") {
  for (const auto& [k, v] : a) {
    if (k.rfind(prefix, 0) != 0) continue;
    if (!(v == b.at(k))) return false;
  }
  return true;
}

TEST(TrainConfig, Validate) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto expect_key = [](TrainConfig t, const std::string& key) {
    try {
      t.validate();
      ADD_FAILURE() << "expected ConfigError for " << key;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key, key);
    }
  };
  TrainConfig t;
  t.epochs[1] = -1;
  expect_key(t, "train.epochs2");
  t = {};
  t.lr[2] = std::numeric_limits<double>::quiet_NaN();
  expect_key(t, "train.lr3");
  t = {};
  t.batch = 0;
  expect_key(t, "train.batch");
  t = {};
  t.weights.lambda5 = -1.0;
  expect_key(t, "loss");
}

TEST(TrainConfig, StepDecay) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(t.lr_at(1, 0), 2e-3);
  EXPECT_DOUBLE_EQ(t.lr_at(1, 19), 2e-3);
  EXPECT_DOUBLE_EQ(t.lr_at(1, 20), 2e-4);
  EXPECT_DOUBLE_EQ(t.lr_at(2, 5), 1e-3);
  EXPECT_DOUBLE_EQ(t.lr_at(2, 6), 1e-4);
  t.epochs[2] = 1;
  EXPECT_DOUBLE_EQ(t.lr_at(3, 0), 1e-3);
}

TEST(FieldMode, ParseRoundTripAndErrors) {
  for (auto m : {FieldMode::kFull, FieldMode::kUnsup, FieldMode::kFc, FieldMode::kNone})
    EXPECT_EQ(model::parse_field_mode(model::field_mode_name(m)), m);
  try {
    model::parse_field_mode("ifm");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "train.field_mode");
  }
}

TEST(InitModel, DeterministicPerSeed) {
  synth::GeneratorConfig g;
  TrainConfig t = small_config();
  const Model a = init_model(g, t), b = init_model(g, t);
  EXPECT_TRUE(same_params(a.params, b.params));
  t.seed = 2;
  EXPECT_FALSE(same_params(a.params, init_model(g, t).params));
  EXPECT_EQ(a.params.at("enc.w1").rows(), synth::descriptor_dim(g));
  EXPECT_EQ(a.params.at("cls.w").cols(), static_cast<std::size_t>(g.classes) + 1);
  EXPECT_EQ(a.params.at("verb.w2").cols(), static_cast<std::size_t>(g.verbs));
}

TEST(CheckFinite, ThrowsOnNan) {
  model::ParamMap p;
  p["x"] = Tensor(1, 2);
  EXPECT_NO_THROW(check_finite(p, 1, 0));
  p["x"](0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(check_finite(p, 1, 0), TrainingDiverged);
}

TEST(Leaves, MissingParameterIsCheckpointError) {
  synth::GeneratorConfig g;
  Model m = init_model(g, small_config());
  m.params.erase("box.w");
  EXPECT_THROW(predict(m, small_data()[0], 0), CheckpointError);
}

TEST(TrainStage, ZeroLearningRateAndZeroEpochs) {
  synth::GeneratorConfig g;
  TrainConfig t = small_config();
  t.lr = {0.0, 0.0, 0.0};
  Model m = init_model(g, t);
  const auto before = m.params;
  EXPECT_EQ(train_stage(m, 1, small_data(), t).size(), 3u);
  EXPECT_TRUE(same_params(before, m.params));

  t = small_config();
  t.epochs[1] = 0;
  EXPECT_TRUE(train_stage(m, 2, small_data(), t).empty());
  EXPECT_TRUE(same_params(before, m.params));
}

TEST(TrainStage, Errors) {
  synth::GeneratorConfig g;
  Model m = init_model(g, small_config());
  EXPECT_THROW(train_stage(m, 4, small_data(), small_config()), ConfigError);
  EXPECT_THROW(train_stage(m, 1, {}, small_config()), DataError);
}

TEST(TrainStage, ThreadCountDoesNotChangeResult) {
  synth::GeneratorConfig g;
  TrainConfig t = small_config();
  Model a = init_model(g, t), b = init_model(g, t);
  for (int s = 1; s <= 3; ++s) train_stage(a, s, small_data(), t);
  t.threads = 3;
  for (int s = 1; s <= 3; ++s) train_stage(b, s, small_data(), t);
  EXPECT_TRUE(same_params(a.params, b.params));
}

TEST(TrainStage, StageTermsAndLossDecrease) {
  synth::GeneratorConfig g;
  TrainConfig t = small_config();
  t.epochs = {12, 6, 6};
  Model m = init_model(g, t);
  const auto s1 = train_stage(m, 1, small_data(), t);
  for (const auto& r : s1) {
    EXPECT_EQ(r.mean.field, 0.0);
    EXPECT_EQ(r.mean.verb, 0.0);
    EXPECT_EQ(r.stage, 1);
  }
  EXPECT_LT(s1.back().mean.total, s1.front().mean.total);
  const auto s2 = train_stage(m, 2, small_data(), t);
  EXPECT_NE(s2.front().mean.field, 0.0);
  EXPECT_EQ(s2.front().mean.verb, 0.0);
  const auto s3 = train_stage(m, 3, small_data(), t);
  EXPECT_GT(s3.front().mean.verb, 0.0);
  EXPECT_LT(s3.back().mean.verb, s3.front().mean.verb);
}

TEST(SceneLoss, UnsupervisedIgnoresCrossEntropyWeight) {
  synth::GeneratorConfig g;
  const Model m = init_model(g, small_config());
  const auto leaves = model::Leaves::make(m.params, false);
  losses::LossWeights w = calibrated_weights();
  const Example& ex = small_data()[1];
  const double a = scene_loss(leaves, m.arch, FieldMode::kUnsup, 2, ex, w).record.total;
  w.lambda5 = 7.0;
  EXPECT_EQ(a, scene_loss(leaves, m.arch, FieldMode::kUnsup, 2, ex, w).record.total);
  EXPECT_NE(a, scene_loss(leaves, m.arch, FieldMode::kFull, 2, ex, w).record.total);
}

// With every field weight at zero the module contributes no gradient to the
// shared layers, so they train exactly as without it.
TEST(TrainStage, ZeroFieldWeightsMatchNoModule) {
  synth::GeneratorConfig g;
  TrainConfig t = small_config();
  t.weights.lambda4 = t.weights.lambda5 = t.weights.lambda6 = t.weights.lambda_r = 0.0;
  Model full = init_model(g, t);
  t.field_mode = FieldMode::kNone;
  Model none = init_model(g, t);
  train_stage(full, 2, small_data(), t);
  train_stage(none, 2, small_data(), t);
  for (const char* prefix : {"enc.", "box.", "cls."}) EXPECT_TRUE(same_params(full.params, none.params, prefix)) << prefix;
}

TEST(Predict, ScoresAndOrdering) {
  synth::GeneratorConfig g;
  const Model m = init_model(g, small_config());
  const Example& ex = small_data()[2];
  const auto p = predict(m, ex, 7);
  ASSERT_FALSE(p.pairs.empty());
  EXPECT_LE(p.pairs.size(), ex.cand.size());
  for (std::size_t i = 0; i < p.pairs.size(); ++i) {
    const auto& c = p.pairs[i];
    EXPECT_EQ(c.scene, 7u);
    if (i > 0) {
      EXPECT_GE(p.pairs[i - 1].score, c.score);
    }
    ASSERT_TRUE(c.interactiveness.has_value());
    ASSERT_TRUE(c.energy.has_value());
    for (std::size_t v = 0; v < c.verb_scores.size(); ++v)
      EXPECT_DOUBLE_EQ(c.final_scores[v], c.verb_scores[v] * *c.interactiveness);
  }
  EXPECT_EQ(p.counts.size(), ex.cand.groups.size());

  const auto vo = predict(m, ex, 0, Scoring::kVerbOnly);
  for (const auto& c : vo.pairs) {
    EXPECT_FALSE(c.interactiveness.has_value());
    EXPECT_EQ(c.final_scores, c.verb_scores);
  }

  Model none = m;
  none.mode = FieldMode::kNone;
  const auto np = predict(none, ex, 0);
  EXPECT_TRUE(np.counts.empty());
  for (const auto& c : np.pairs) EXPECT_FALSE(c.energy.has_value());
}

TEST(Predict, PredictAllConcatenatesInSceneOrder) {
  synth::GeneratorConfig g;
  const Model m = init_model(g, small_config());
  const auto all = predict_all(m, small_data(), Scoring::kDefault, kDefaultNmsThreshold, 2);
  std::size_t expected = 0;
  for (std::size_t i = 0; i < small_data().size(); ++i) expected += predict(m, small_data()[i], i).pairs.size();
  ASSERT_EQ(all.pairs.size(), expected);
  for (std::size_t i = 1; i < all.pairs.size(); ++i) EXPECT_LE(all.pairs[i - 1].scene, all.pairs[i].scene);
}

}  // namespace
}  // namespace ifield::train
