#pragma once

// Run configuration, dataset files, checkpoints and prediction records.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ifield/eval.hpp"
#include "ifield/geometry.hpp"
#include "ifield/synth.hpp"
#include "ifield/train.hpp"

#include <json.hpp>

namespace ifield::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kCheckpointFormat = "ifield-checkpoint";
inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kScenesFile = "scenes.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

// ---------------------------------------------------------------------------
// Run configuration: `key = value` lines, `#` starts a comment.

struct RunConfig {
  synth::GeneratorConfig synth;
  train::TrainConfig train;
  eval::MatchOptions match;
  double nms_threshold = kDefaultNmsThreshold;

  void validate() const {
    synth.validate();
    train.validate();
    if (!(match.iou_threshold > 0.0 && match.iou_threshold <= 1.0))
      throw ConfigError("eval.iou_threshold", "must be in (0, 1]");
    if (!(nms_threshold > 0.0 && nms_threshold < 1.0)) throw ConfigError("eval.nms_threshold", "must be in (0, 1)");
  }
};

inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key, "cannot parse '" + text + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

struct ConfigEntry {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

// Every configurable field, in the order they are rendered.
inline std::vector<ConfigEntry> config_entries(RunConfig& c) {
  std::vector<ConfigEntry> e;
  auto dbl = [&](std::string k, double& v) {
    e.push_back({k, [&v, k](const std::string& s) { v = parse_number<double>(k, s); },
                 [&v] { return format_double(v); }});
  };
  auto integer = [&](std::string k, int& v) {
    e.push_back({k, [&v, k](const std::string& s) { v = parse_number<int>(k, s); },
                 [&v] { return std::to_string(v); }});
  };
  auto size = [&](std::string k, std::size_t& v) {
    e.push_back({k, [&v, k](const std::string& s) { v = parse_number<std::size_t>(k, s); },
                 [&v] { return std::to_string(v); }});
  };
  auto u64 = [&](std::string k, std::uint64_t& v) {
    e.push_back({k, [&v, k](const std::string& s) { v = parse_number<std::uint64_t>(k, s); },
                 [&v] { return std::to_string(v); }});
  };

  auto& g = c.synth;
  e.push_back({"synth.mixture",
               [&g](const std::string& s) {
                 std::vector<double> parts;
                 std::stringstream ss(s);
                 for (std::string item; std::getline(ss, item, ',');) parts.push_back(parse_number<double>("synth.mixture", item));
                 if (parts.size() != kRegimeCount)
                   throw ConfigError("synth.mixture", "expected three comma-separated weights");
                 for (std::size_t i = 0; i < kRegimeCount; ++i) g.mixture[i] = parts[i];
               },
               [&g] {
                 return format_double(g.mixture[0]) + "," + format_double(g.mixture[1]) + "," + format_double(g.mixture[2]);
               }});
  integer("synth.humans_min", g.humans_min);
  integer("synth.humans_max", g.humans_max);
  integer("synth.objects_min", g.objects_min);
  integer("synth.objects_max", g.objects_max);
  integer("synth.classes", g.classes);
  integer("synth.verbs", g.verbs);
  integer("synth.feature_dim", g.feature_dim);
  dbl("synth.separation", g.separation);
  dbl("synth.feature_std", g.feature_std);
  e.push_back({"synth.feature_mode", [&g](const std::string& s) { g.mode = synth::parse_feature_mode(trim(s)); },
               [&g] { return std::string(synth::feature_mode_name(g.mode)); }});
  u64("synth.seed", g.seed);
  u64("synth.feature_seed", g.feature_seed);
  dbl("synth.spread_min", g.spread_min);
  dbl("synth.spread_max", g.spread_max);
  dbl("synth.human_w_min", g.human_w_min);
  dbl("synth.human_w_max", g.human_w_max);
  dbl("synth.human_h_min", g.human_h_min);
  dbl("synth.human_h_max", g.human_h_max);
  dbl("synth.object_min", g.object_min);
  dbl("synth.object_max", g.object_max);
  dbl("synth.jitter", g.jitter);
  dbl("synth.near_radius", g.near_radius);
  dbl("synth.far_min", g.far_min);
  dbl("synth.far_max", g.far_max);

  auto& t = c.train;
  for (int s = 0; s < train::kStages; ++s) integer("train.epochs" + std::to_string(s + 1), t.epochs[s]);
  for (int s = 0; s < train::kStages; ++s) dbl("train.lr" + std::to_string(s + 1), t.lr[s]);
  dbl("train.lr_decay", t.lr_decay);
  dbl("train.decay_at", t.decay_at);
  size("train.batch", t.batch);
  dbl("train.weight_decay", t.weight_decay);
  dbl("train.beta1", t.beta1);
  dbl("train.beta2", t.beta2);
  dbl("train.adam_eps", t.adam_eps);
  e.push_back({"train.field_mode", [&t](const std::string& s) { t.field_mode = model::parse_field_mode(trim(s)); },
               [&t] { return std::string(model::field_mode_name(t.field_mode)); }});
  u64("train.seed", t.seed);
  size("train.hidden", t.hidden);
  size("train.feature_dim", t.feature_dim);
  size("train.heads", t.heads);
  size("train.head_dim", t.head_dim);

  auto& w = t.weights;
  dbl("loss.lambda1", w.lambda1);
  dbl("loss.lambda2", w.lambda2);
  dbl("loss.lambda3", w.lambda3);
  dbl("loss.lambda4", w.lambda4);
  dbl("loss.lambda5", w.lambda5);
  dbl("loss.lambda6", w.lambda6);
  dbl("loss.lambda_r", w.lambda_r);

  dbl("eval.iou_threshold", c.match.iou_threshold);
  e.push_back({"eval.class_aware", [&c](const std::string& s) { c.match.class_aware = parse_bool("eval.class_aware", s); },
               [&c] { return std::string(c.match.class_aware ? "true" : "false"); }});
  dbl("eval.nms_threshold", c.nms_threshold);
  return e;
}

// Applies `key = value` lines on top of `base`. Unknown keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  auto entries = config_entries(base);
  std::istringstream in(text);
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ConfigEntry& e) { return e.key == key; });
    if (it == entries.end()) throw ConfigError(key, "unknown key");
    it->set(value);
  }
  return base;
}

inline std::string render_config(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream os;
  os << "# resolved ifield run configuration\n";
  for (const auto& e : config_entries(copy)) os << e.key << " = " << e.get() << "\n";
  return os.str();
}

inline std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline RunConfig load_config(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("config", "cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config(os.str());
}

// ---------------------------------------------------------------------------
// Scenes

inline json box_json(const Box& b) { return json::array({b.x1(), b.y1(), b.x2(), b.y2()}); }

inline Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be an array of four numbers");
  try {
    return Box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

inline json scene_json(const Scene& s) {
  json j;
  j["seed"] = s.seed;
  j["regime"] = regime_name(s.regime);
  j["humans"] = json::array();
  for (const auto& h : s.humans) j["humans"].push_back(box_json(h));
  j["objects"] = json::array();
  for (const auto& o : s.objects) j["objects"].push_back({{"box", box_json(o.box)}, {"category", o.category}});
  j["gt_pairs"] = json::array();
  for (const auto& g : s.gt_pairs) j["gt_pairs"].push_back({{"human", g.human}, {"object", g.object}, {"verbs", g.verbs}});
  return j;
}

inline Scene scene_from(const json& j) {
  try {
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.regime = parse_regime(j.at("regime").get<std::string>());
    for (const auto& h : j.at("humans")) s.humans.push_back(box_from(h));
    for (const auto& o : j.at("objects")) s.objects.push_back({box_from(o.at("box")), o.at("category").get<int>()});
    for (const auto& g : j.at("gt_pairs"))
      s.gt_pairs.push_back({g.at("human").get<std::size_t>(), g.at("object").get<std::size_t>(),
                            g.at("verbs").get<std::vector<int>>()});
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scene record: ") + e.what());
  }
}

inline std::string scenes_jsonl(const std::vector<Scene>& scenes) {
  std::string out;
  for (const auto& s : scenes) out += scene_json(s).dump() + "\n";
  return out;
}

inline std::vector<Scene> parse_scenes(const std::string& text, const std::string& origin) {
  std::vector<Scene> out;
  std::istringstream in(text);
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(scene_from(j));
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline json generator_json(const synth::GeneratorConfig& g) {
  RunConfig c;
  c.synth = g;
  json j = json::object();
  for (const auto& e : config_entries(c))
    if (e.key.rfind("synth.", 0) == 0) j[e.key.substr(6)] = e.get();
  return j;
}

inline synth::GeneratorConfig generator_from(const json& j) {
  RunConfig c;
  auto entries = config_entries(c);
  for (const auto& [k, v] : j.items()) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ConfigEntry& e) { return e.key == "synth." + k; });
    if (it == entries.end() || !v.is_string()) throw DataError("manifest: unexpected generator field '" + k + "'");
    try {
      it->set(v.get<std::string>());
    } catch (const ConfigError& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
  }
  return c.synth;
}

inline json manifest_json(const synth::Manifest& m, const synth::GeneratorConfig& g) {
  json j;
  j["tool_version"] = kToolVersion;
  j["count"] = m.count;
  j["seed"] = m.seed;
  json freq = json::object(), conf = json::object(), counts = json::object();
  for (std::size_t r = 0; r < kRegimeCount; ++r) {
    const char* name = regime_name(static_cast<Regime>(r));
    conf[name] = m.configured[r];
    counts[name] = m.realized_counts[r];
    freq[name] = m.realized_frequency(static_cast<Regime>(r));
  }
  j["configured_mixture"] = conf;
  j["realized_counts"] = counts;
  j["realized_frequency"] = freq;
  j["totals"] = {{"humans", m.humans}, {"objects", m.objects}, {"gt_pairs", m.gt_pairs}, {"candidates", m.candidates}};
  j["generator"] = generator_json(g);
  return j;
}

struct Dataset {
  synth::GeneratorConfig generator;
  std::vector<Scene> scenes;
};

inline void write_dataset(const fs::path& dir, const std::vector<Scene>& scenes, const synth::GeneratorConfig& g) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  eval::write_file(dir / kScenesFile, scenes_jsonl(scenes));
  eval::write_file(dir / kManifestFile, manifest_json(synth::summarize(scenes, g), g).dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset d;
  json m;
  try {
    m = json::parse(read_text(dir / kManifestFile));
  } catch (const json::exception& e) {
    throw DataError("manifest: " + std::string(e.what()));
  }
  if (!m.contains("generator")) throw DataError("manifest: missing generator section");
  d.generator = generator_from(m["generator"]);
  d.scenes = parse_scenes(read_text(dir / kScenesFile), (dir / kScenesFile).string());
  if (d.scenes.empty()) throw DataError("dataset has no scenes: " + dir.string());
  const auto count = m.value("count", std::size_t{0});
  if (count != d.scenes.size()) throw DataError("manifest count does not match scene file");
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json tensor_json(const Tensor& t) {
  json j;
  j["rows"] = t.rows();
  j["cols"] = t.cols();
  j["data"] = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) j["data"].push_back(t[i]);
  return j;
}

inline Tensor tensor_from(const json& j, const std::string& name) {
  const auto r = j.at("rows").get<std::size_t>(), c = j.at("cols").get<std::size_t>();
  const auto& d = j.at("data");
  if (!d.is_array() || d.size() != r * c) throw CheckpointError("parameter '" + name + "': data does not match shape");
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d[i].get<double>();
  return t;
}

inline json architecture_json(const model::Architecture& a) {
  return {{"input_dim", a.input_dim}, {"hidden", a.hidden},   {"feature_dim", a.feature_dim},
          {"classes", a.classes},     {"verbs", a.verbs},     {"heads", a.heads},
          {"head_dim", a.head_dim},   {"verb_hidden", a.verb_hidden}};
}

inline model::Architecture architecture_from(const json& j) {
  model::Architecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::size_t>();
  a.feature_dim = j.at("feature_dim").get<std::size_t>();
  a.classes = j.at("classes").get<std::size_t>();
  a.verbs = j.at("verbs").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  a.head_dim = j.at("head_dim").get<std::size_t>();
  a.verb_hidden = j.at("verb_hidden").get<std::size_t>();
  return a;
}

struct Checkpoint {
  train::Model model;
  int stage = 0;  // last completed stage
};

inline std::string checkpoint_text(const Checkpoint& c) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["tool_version"] = kToolVersion;
  j["stage"] = c.stage;
  j["field_mode"] = model::field_mode_name(c.model.mode);
  j["architecture"] = architecture_json(c.model.arch);
  json p = json::object();
  for (const auto& [k, v] : c.model.params) p[k] = tensor_json(v);
  j["params"] = p;
  return j.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != kCheckpointFormat) throw CheckpointError("not an ifield checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    c.stage = j.at("stage").get<int>();
    try {
      c.model.mode = model::parse_field_mode(j.at("field_mode").get<std::string>());
    } catch (const ConfigError& e) {
      throw CheckpointError(e.what());
    }
    c.model.arch = architecture_from(j.at("architecture"));
    // Every expected parameter must be present with its expected shape.
    const model::ParamMap expected = model::init_params(c.model.arch, 0);
    const auto& params = j.at("params");
    for (const auto& [k, v] : expected) {
      if (!params.contains(k)) throw CheckpointError("missing parameter '" + k + "'");
      Tensor t = tensor_from(params[k], k);
      if (!t.same_shape(v))
        throw CheckpointError("parameter '" + k + "' has shape " + t.shape_string() + ", expected " + v.shape_string());
      c.model.params[k] = std::move(t);
    }
    if (params.size() != expected.size()) throw CheckpointError("checkpoint has unexpected parameters");
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
}

inline Checkpoint load_checkpoint(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_checkpoint(os.str());
}

// A checkpoint can only score data whose descriptors and label spaces match.
inline void check_compatible(const model::Architecture& a, const synth::GeneratorConfig& g) {
  if (a.input_dim != synth::descriptor_dim(g))
    throw CheckpointError("checkpoint expects descriptors of width " + std::to_string(a.input_dim) +
                          ", dataset produces " + std::to_string(synth::descriptor_dim(g)));
  if (a.classes != static_cast<std::size_t>(g.classes) || a.verbs != static_cast<std::size_t>(g.verbs))
    throw CheckpointError("checkpoint class or verb count does not match the dataset");
}

// ---------------------------------------------------------------------------
// Predictions and logs

inline json prediction_json(const PairCandidate& p) {
  json j;
  j["scene"] = p.scene;
  j["human"] = p.human;
  j["object"] = p.object;
  j["human_box"] = box_json(p.human_box);
  j["object_box"] = box_json(p.object_box);
  j["object_class"] = p.object_class;
  j["group"] = p.group;
  j["score"] = p.score;
  j["verb_scores"] = p.verb_scores;
  j["final_scores"] = p.final_scores;
  if (p.interactiveness) j["interactiveness"] = *p.interactiveness;
  if (p.energy) j["energy"] = *p.energy;
  return j;
}

inline PairCandidate prediction_from(const json& j) {
  PairCandidate p;
  p.scene = j.at("scene").get<std::size_t>();
  p.human = j.at("human").get<std::size_t>();
  p.object = j.at("object").get<std::size_t>();
  p.human_box = box_from(j.at("human_box"));
  p.object_box = box_from(j.at("object_box"));
  p.object_class = j.at("object_class").get<int>();
  p.group = j.value("group", -1);
  p.verb_scores = j.at("verb_scores").get<std::vector<double>>();
  p.final_scores = j.value("final_scores", p.verb_scores);
  if (j.contains("interactiveness")) p.interactiveness = j["interactiveness"].get<double>();
  if (j.contains("energy")) p.energy = j["energy"].get<double>();
  p.score = j.contains("score") ? j["score"].get<double>()
                                : (p.final_scores.empty() ? 0.0 : *std::max_element(p.final_scores.begin(), p.final_scores.end()));
  return p;
}

inline std::string predictions_jsonl(const std::vector<PairCandidate>& preds) {
  std::string out;
  for (const auto& p : preds) out += prediction_json(p).dump() + "\n";
  return out;
}

inline std::vector<PairCandidate> parse_predictions(const std::string& text, std::size_t num_scenes) {
  std::vector<PairCandidate> out;
  std::istringstream in(text);
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prediction_from(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("predictions:" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("predictions:" + std::to_string(lineno) + ": " + e.what());
    }
    if (out.back().scene >= num_scenes)
      throw DataError("predictions:" + std::to_string(lineno) + ": scene index out of range");
  }
  return out;
}

inline json epoch_json(const train::EpochRecord& r) {
  return {{"stage", r.stage},
          {"epoch", r.epoch},
          {"lr", r.lr},
          {"loss",
           {{"total", r.mean.total}, {"pair", r.mean.pair}, {"field", r.mean.field}, {"verb", r.mean.verb}, {"fc", r.mean.fc}}},
          {"wall_seconds", r.wall_seconds}};
}

}  // namespace ifield::io
