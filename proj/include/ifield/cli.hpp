#pragma once

// Command-line front end: generate, train, eval, gradcheck.

#include <cstdlib>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "ifield/eval.hpp"
#include "ifield/gradsuite.hpp"
#include "ifield/io.hpp"
#include "ifield/synth.hpp"
#include "ifield/train.hpp"

#include <CLI11.hpp>

namespace ifield::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCheckpoint = 4;

inline constexpr const char* kThreadsEnv = "IFIELD_THREADS";

inline unsigned default_threads() {
  const char* v = std::getenv(kThreadsEnv);
  if (!v || !*v) return 1;
  const auto n = io::parse_number<unsigned>(kThreadsEnv, v);
  if (n < 1) throw ConfigError(kThreadsEnv, "must be >= 1");
  return n;
}

// "1,2,3", "2-3" or "2" to a sorted stage list.
inline std::vector<int> parse_stages(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = io::trim(item);
    const auto dash = item.find('-');
    const int lo = io::parse_number<int>("stages", item.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : io::parse_number<int>("stages", item.substr(dash + 1));
    if (lo < 1 || hi > train::kStages || lo > hi) throw ConfigError("stages", "stages must lie in 1..3");
    for (int s = lo; s <= hi; ++s) out.insert(s);
  }
  if (out.empty()) throw ConfigError("stages", "no stage selected");
  std::vector<int> v(out.begin(), out.end());
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] != v[i - 1] + 1) throw ConfigError("stages", "stages must be contiguous");
  return v;
}

inline void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

// config.txt and run.json: what a run directory needs to be reproduced.
inline void write_run_files(const fs::path& dir, const std::string& command, const io::RunConfig& cfg, json extra) {
  make_dir(dir);
  eval::write_file(dir / "config.txt", io::render_config(cfg));
  json run;
  run["tool"] = "ifield";
  run["tool_version"] = io::kToolVersion;
  run["command"] = command;
  run["seed"] = {{"synth", cfg.synth.seed}, {"train", cfg.train.seed}};
  for (auto& [k, v] : extra.items()) run[k] = v;
  eval::write_file(dir / "run.json", run.dump(2) + "\n");
}

struct GenerateArgs {
  std::string config, out;
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& os) {
  io::RunConfig cfg = a.config.empty() ? io::RunConfig{} : io::load_config(a.config);
  if (a.seed) cfg.synth.seed = *a.seed;
  cfg.synth.validate();
  const auto scenes = synth::generate_dataset(cfg.synth, a.count);
  io::write_dataset(a.out, scenes, cfg.synth);
  write_run_files(a.out, "generate", cfg, {{"count", a.count}});
  const auto m = synth::summarize(scenes, cfg.synth);
  os << "wrote " << m.count << " scenes to " << (fs::path(a.out) / io::kScenesFile).string() << "\n";
  for (std::size_t r = 0; r < kRegimeCount; ++r) {
    const auto reg = static_cast<Regime>(r);
    os << "  " << regime_name(reg) << ": " << m.realized_counts[r] << " (" << eval::fmt(m.realized_frequency(reg))
       << ", configured " << eval::fmt(cfg.synth.mixture[r]) << ")\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, init, stages = "1-3", field_mode;
  bool unsup_field = false;
  unsigned threads = 1;
};

inline int cmd_train(const TrainArgs& a, std::ostream& os) {
  io::RunConfig cfg = a.config.empty() ? io::RunConfig{} : io::load_config(a.config);
  if (!a.field_mode.empty()) cfg.train.field_mode = model::parse_field_mode(a.field_mode);
  if (a.unsup_field) cfg.train.field_mode = model::FieldMode::kUnsup;
  cfg.train.threads = a.threads;
  const std::vector<int> stages = parse_stages(a.stages);
  cfg.train.validate();

  const io::Dataset data = io::load_dataset(a.data);
  // Candidates must be built exactly as the generator intended.
  cfg.synth = data.generator;
  cfg.validate();

  train::Model m;
  if (stages.front() > 1) {
    if (a.init.empty()) throw ConfigError("init", "stages after 1 need --init with an earlier checkpoint");
    const io::Checkpoint c = io::load_checkpoint(a.init);
    if (c.stage < stages.front() - 1)
      throw CheckpointError("--init checkpoint finished stage " + std::to_string(c.stage) + ", need stage " +
                            std::to_string(stages.front() - 1));
    io::check_compatible(c.model.arch, cfg.synth);
    const auto expect = train::architecture_for(cfg.synth, cfg.train);
    if (io::architecture_json(expect) != io::architecture_json(c.model.arch))
      throw CheckpointError("--init checkpoint architecture does not match the configuration");
    m = c.model;
    m.mode = cfg.train.field_mode;
  } else {
    m = train::init_model(cfg.synth, cfg.train);
  }

  const auto examples = train::make_examples(data.scenes, cfg.synth);
  make_dir(a.out);
  write_run_files(a.out, "train", cfg,
                  {{"stages", stages}, {"threads", a.threads}, {"data", a.data}, {"scenes", data.scenes.size()},
                   {"field_mode", model::field_mode_name(cfg.train.field_mode)}});
  std::ofstream log(fs::path(a.out) / "train_log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write training log in " + a.out);
  for (int stage : stages) {
    train::train_stage(m, stage, examples, cfg.train, [&](const train::EpochRecord& r) {
      log << io::epoch_json(r).dump() << "\n";
      log.flush();
      os << "stage " << r.stage << " epoch " << r.epoch << " lr " << eval::fmt(r.lr) << " loss "
         << eval::fmt(r.mean.total) << "\n";
    });
    const fs::path ckpt = fs::path(a.out) / ("checkpoint_stage" + std::to_string(stage) + ".json");
    eval::write_file(ckpt, io::checkpoint_text({m, stage}));
    os << "wrote " << ckpt.string() << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string config, checkpoint, data, out, predictions;
  std::vector<std::size_t> topk{5, 10};
  bool no_sb = false;
  unsigned threads = 1;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& os, std::ostream& es = std::cerr) {
  io::RunConfig cfg = a.config.empty() ? io::RunConfig{} : io::load_config(a.config);
  for (std::size_t k : a.topk)
    if (k < 1) throw ConfigError("topk", "k must be >= 1");
  if (a.checkpoint.empty() == a.predictions.empty())
    throw ConfigError("checkpoint", "give exactly one of --checkpoint or --predictions");
  const io::Dataset data = io::load_dataset(a.data);
  cfg.synth = data.generator;
  cfg.validate();

  train::Predictions preds;
  json meta_extra;
  eval::EvalReport report;
  if (!a.checkpoint.empty()) {
    const io::Checkpoint c = io::load_checkpoint(a.checkpoint);
    io::check_compatible(c.model.arch, cfg.synth);
    const auto examples = train::make_examples(data.scenes, cfg.synth);
    preds = train::predict_all(c.model, examples, a.no_sb ? train::Scoring::kVerbOnly : train::Scoring::kDefault,
                               cfg.nms_threshold, a.threads);
    report.metadata["checkpoint_stage"] = std::to_string(c.stage);
    report.metadata["field_mode"] = model::field_mode_name(c.model.mode);
  } else {
    preds.pairs = io::parse_predictions(io::read_text(a.predictions), data.scenes.size());
    if (a.no_sb)
      for (auto& p : preds.pairs) p.interactiveness.reset();
    report.metadata["source"] = "predictions file";
  }
  const auto meta = report.metadata;
  report = eval::evaluate(preds.pairs, data.scenes, preds.counts, static_cast<std::size_t>(cfg.synth.verbs), cfg.match,
                          a.topk);
  report.metadata = meta;
  report.metadata["tool_version"] = io::kToolVersion;
  report.metadata["scoring"] = a.no_sb ? "verb_only" : "default";
  report.metadata["scenes"] = std::to_string(data.scenes.size());
  report.metadata["iou_threshold"] = eval::fmt(cfg.match.iou_threshold);
  report.metadata["class_aware"] = cfg.match.class_aware ? "true" : "false";
  report.metadata["nms_threshold"] = eval::fmt(cfg.nms_threshold);

  eval::emit_report(report, a.out);
  eval::write_file(fs::path(a.out) / "predictions.jsonl", io::predictions_jsonl(preds.pairs));
  write_run_files(a.out, "eval", cfg,
                  {{"checkpoint", a.checkpoint}, {"predictions", a.predictions}, {"data", a.data},
                   {"no_sb", a.no_sb}, {"topk", a.topk}, {"threads", a.threads}});
  for (const auto& w : report.warnings) es << "warning: " << w << "\n";
  os << "interactiveness AP " << eval::fmt(report.all.interactiveness_ap) << "\n";
  os << "verb mAP " << eval::fmt(report.all.verb_map) << "\n";
  for (const auto& [k, m] : report.topk)
    os << "top" << k << " interactiveness AP " << eval::fmt(m.interactiveness_ap) << "\n";
  for (const auto& [r, e] : report.count_error) os << "count error " << regime_name(r) << " " << eval::fmt(e) << "\n";
  os << "report written to " << a.out << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string config;
  gradsuite::SuiteOptions suite;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& os) {
  if (!a.config.empty()) io::load_config(a.config).validate();
  const auto r = gradsuite::run(a.suite);
  for (const auto& c : r.checks)
    if (!c.report.pass)
      os << "FAIL config " << c.config << " " << c.name << " (N=" << c.n << ", C=" << c.c << "): " << c.report.diagnostic
         << "\n";
  os << (r.pass() ? "PASS" : "FAIL") << " " << r.checks.size() - r.failures << "/" << r.checks.size()
     << " checks, max rel. err " << eval::fmt(r.max_rel_err) << ", tolerance " << eval::fmt(gradsuite::kTolerance)
     << ", " << eval::fmt(r.seconds) << " s\n";
  return r.pass() ? kExitOk : kExitInternal;
}

// Parses argv and dispatches; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"Interactiveness field toolkit: synthetic scenes, staged training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::kToolVersion);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic scene dataset");
  g->add_option("--config", gen.config, "Run configuration file (key = value)")->check(CLI::ExistingFile);
  g->add_option("--count", gen.count, "Number of scenes")->required();
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--seed", gen.seed, "Override synth.seed");

  TrainArgs tr;
  std::optional<unsigned> tr_threads;
  auto* t = app.add_subcommand("train", "Train the pair model in stages");
  t->add_option("--config", tr.config, "Run configuration file (key = value)")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory written by generate")->required();
  t->add_option("--out", tr.out, "Run directory for checkpoints and logs")->required();
  t->add_option("--stages", tr.stages, "Stages to run, e.g. 1, 2-3 or 1,2,3")->capture_default_str();
  t->add_option("--init", tr.init, "Checkpoint to resume from when the first stage is after 1");
  t->add_flag("--unsup-field", tr.unsup_field, "Stage 2 uses only the unsupervised field losses");
  t->add_option("--field-mode", tr.field_mode, "Interactiveness module: full, unsup, fc or none");
  t->add_option("--threads", tr_threads, std::string("Worker threads (default from ") + kThreadsEnv + ", else 1)");

  EvalArgs ev;
  std::optional<unsigned> ev_threads;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction file");
  e->add_option("--config", ev.config, "Run configuration file; only eval.* keys matter")->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  e->add_option("--predictions", ev.predictions, "Score an external prediction file instead")->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--topk", ev.topk, "Per-scene top-k subsets reported next to all predictions")->capture_default_str();
  e->add_flag("--no-sb", ev.no_sb, "Score by S_v alone, dropping the interactiveness score");
  e->add_option("--threads", ev_threads, std::string("Worker threads (default from ") + kThreadsEnv + ", else 1)");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every loss and the attention field");
  c->add_option("--config", gc.config, "Run configuration file to validate")->check(CLI::ExistingFile);
  c->add_option("--configs", gc.suite.configs, "Random configurations")->capture_default_str();
  c->add_option("--seed", gc.suite.seed, "Suite seed")->capture_default_str();
  c->add_flag("--plant-defect", gc.suite.plant_defect, "Inject a wrong gradient; the check must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err, os, es);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen, os);
    if (*t) {
      tr.threads = tr_threads ? *tr_threads : default_threads();
      return cmd_train(tr, os);
    }
    if (*e) {
      ev.threads = ev_threads ? *ev_threads : default_threads();
      if (ev.threads < 1) throw ConfigError("threads", "must be >= 1");
      return cmd_eval(ev, os, es);
    }
    if (*c) {
      if (gc.suite.configs < 1) throw ConfigError("configs", "must be >= 1");
      return cmd_gradcheck(gc, os);
    }
  } catch (const ConfigError& err) {
    es << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const DataError& err) {
    es << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& err) {
    es << "checkpoint error: " << err.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& err) {
    es << "error: " << err.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace ifield::cli
