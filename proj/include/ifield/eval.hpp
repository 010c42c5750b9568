#pragma once

// Interactiveness AP, verb AP, top-k filtering, count error and reports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ifield/geometry.hpp"
#include "ifield/scene.hpp"
#include "ifield/train.hpp"
#include "ifield/types.hpp"

#include <json.hpp>

namespace ifield::eval {

inline constexpr double kDefaultIouThreshold = 0.5;

struct MatchOptions {
  double iou_threshold = kDefaultIouThreshold;
  bool class_aware = true;
};

// Ranking score for interactiveness: S_b when present, otherwise the mean
// verb score.
inline double interactiveness_rank_score(const PairCandidate& p) {
  if (p.interactiveness) return *p.interactiveness;
  if (p.verb_scores.empty()) return 0.0;
  return std::accumulate(p.verb_scores.begin(), p.verb_scores.end(), 0.0) / static_cast<double>(p.verb_scores.size());
}

struct PrPoint {
  double score, recall, precision;
};

struct ApResult {
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::vector<PrPoint> ranked;  // one point per prediction, in rank order
  std::vector<bool> true_positive;
};

// All-points interpolated AP from rank-ordered TP flags.
inline double interpolated_ap(const std::vector<PrPoint>& pts) {
  double ap = 0.0, prev_recall = 0.0;
  std::vector<double> best(pts.size() + 1, 0.0);
  for (std::size_t i = pts.size(); i-- > 0;) best[i] = std::max(best[i + 1], pts[i].precision);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].recall > prev_recall) {
      ap += (pts[i].recall - prev_recall) * best[i];
      prev_recall = pts[i].recall;
    }
  }
  return ap;
}

struct GtRef {
  std::size_t scene;
  std::size_t pair;  // index into gt_pairs
};

// Greedy matching in descending score order (stable on ties). A ground truth
// matches at most once; among qualifying ones the best min(IoU_h, IoU_o)
// wins, then the lowest index.
inline ApResult average_precision(const std::vector<PairCandidate>& preds, const std::vector<double>& scores,
                                  const std::vector<Scene>& scenes,
                                  const std::function<bool(std::size_t scene, const GtPair&)>& gt_filter,
                                  const MatchOptions& opt) {
  if (scores.size() != preds.size()) throw std::invalid_argument("average_precision: score count mismatch");
  ApResult r;
  std::vector<std::vector<char>> used(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    used[s].assign(scenes[s].gt_pairs.size(), 0);
    for (std::size_t j = 0; j < scenes[s].gt_pairs.size(); ++j) {
      if (gt_filter(s, scenes[s].gt_pairs[j])) ++r.num_gt;
      else used[s][j] = 1;  // excluded gts can never be matched
    }
  }
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const PairCandidate& p = preds[order[rank]];
    if (p.scene >= scenes.size()) throw DataError("prediction references missing scene " + std::to_string(p.scene));
    const Scene& s = scenes[p.scene];
    int best = -1;
    double best_q = -1.0;
    for (std::size_t j = 0; j < s.gt_pairs.size(); ++j) {
      if (used[p.scene][j]) continue;
      const GtPair& g = s.gt_pairs[j];
      const SceneObject& o = s.objects[g.object];
      if (opt.class_aware && o.category != p.object_class) continue;
      const double ih = iou(p.human_box, s.humans[g.human]), io = iou(p.object_box, o.box);
      if (!(ih > opt.iou_threshold && io > opt.iou_threshold)) continue;
      const double q = std::min(ih, io);
      if (q > best_q) {
        best_q = q;
        best = static_cast<int>(j);
      }
    }
    const bool hit = best >= 0;
    if (hit) {
      used[p.scene][static_cast<std::size_t>(best)] = 1;
      ++tp;
    }
    r.true_positive.push_back(hit);
    const double recall = r.num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(r.num_gt);
    r.ranked.push_back({scores[order[rank]], recall, static_cast<double>(tp) / static_cast<double>(rank + 1)});
  }
  r.ap = r.num_gt == 0 ? 0.0 : interpolated_ap(r.ranked);
  return r;
}

inline ApResult interactiveness_ap(const std::vector<PairCandidate>& preds, const std::vector<Scene>& scenes,
                                   const MatchOptions& opt = {}) {
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(interactiveness_rank_score(p));
  return average_precision(preds, scores, scenes, [](std::size_t, const GtPair&) { return true; }, opt);
}

struct VerbApResult {
  std::map<int, double> per_verb;  // verbs with at least one gt
  double mean = 0.0;
};

inline VerbApResult verb_ap(const std::vector<PairCandidate>& preds, const std::vector<Scene>& scenes,
                            std::size_t num_verbs, const MatchOptions& opt = {}) {
  VerbApResult out;
  for (std::size_t v = 0; v < num_verbs; ++v) {
    std::vector<double> scores;
    for (const auto& p : preds) scores.push_back(v < p.final_scores.size() ? p.final_scores[v] : 0.0);
    const int verb = static_cast<int>(v);
    const ApResult r = average_precision(
        preds, scores, scenes,
        [verb](std::size_t, const GtPair& g) { return std::find(g.verbs.begin(), g.verbs.end(), verb) != g.verbs.end(); },
        opt);
    if (r.num_gt > 0) out.per_verb[verb] = r.ap;
  }
  if (!out.per_verb.empty()) {
    double s = 0.0;
    for (const auto& [v, ap] : out.per_verb) s += ap;
    out.mean = s / static_cast<double>(out.per_verb.size());
  }
  return out;
}

// Keeps the k highest-score records of every scene (stable on ties) and
// preserves input order otherwise.
inline std::vector<PairCandidate> topk_filter(const std::vector<PairCandidate>& preds, std::size_t k) {
  if (k < 1) throw std::invalid_argument("topk_filter: k must be >= 1");
  std::map<std::size_t, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < preds.size(); ++i) by_scene[preds[i].scene].push_back(i);
  std::vector<char> keep(preds.size(), 0);
  for (auto& [s, idx] : by_scene) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
    for (std::size_t j = 0; j < std::min(k, idx.size()); ++j) keep[idx[j]] = 1;
  }
  std::vector<PairCandidate> out;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (keep[i]) out.push_back(preds[i]);
  return out;
}

// Mean |predicted count - n_T| per regime; empty regimes are absent.
inline std::map<Regime, double> count_error(const std::vector<train::GroupCount>& counts) {
  std::map<Regime, std::pair<double, std::size_t>> acc;
  for (const auto& c : counts) {
    auto& a = acc[c.regime];
    a.first += std::abs(c.predicted - static_cast<double>(c.n_t));
    ++a.second;
  }
  std::map<Regime, double> out;
  for (const auto& [r, a] : acc) out[r] = a.first / static_cast<double>(a.second);
  return out;
}

// ---------------------------------------------------------------------------
// Report

inline const std::vector<std::size_t> kReportTopK{5, 10};

struct SubsetMetrics {
  double interactiveness_ap = 0.0;
  double verb_map = 0.0;
  std::map<int, double> verb_ap;
  std::size_t predictions = 0;
};

struct EvalReport {
  SubsetMetrics all;
  std::map<std::size_t, SubsetMetrics> topk;
  std::map<Regime, double> count_error;
  std::vector<PrPoint> pr_curve;  // interactiveness, all predictions
  std::size_t num_gt = 0;
  std::vector<std::string> warnings;
  std::map<std::string, std::string> metadata;
};

inline SubsetMetrics subset_metrics(const std::vector<PairCandidate>& preds, const std::vector<Scene>& scenes,
                                    std::size_t num_verbs, const MatchOptions& opt, ApResult* ap_out = nullptr) {
  SubsetMetrics m;
  ApResult ap = interactiveness_ap(preds, scenes, opt);
  m.interactiveness_ap = ap.ap;
  const VerbApResult v = verb_ap(preds, scenes, num_verbs, opt);
  m.verb_ap = v.per_verb;
  m.verb_map = v.mean;
  m.predictions = preds.size();
  if (ap_out) *ap_out = std::move(ap);
  return m;
}

inline EvalReport evaluate(const std::vector<PairCandidate>& preds, const std::vector<Scene>& scenes,
                           const std::vector<train::GroupCount>& counts, std::size_t num_verbs,
                           const MatchOptions& opt = {}, const std::vector<std::size_t>& topk = kReportTopK) {
  EvalReport r;
  ApResult ap;
  r.all = subset_metrics(preds, scenes, num_verbs, opt, &ap);
  r.num_gt = ap.num_gt;
  r.pr_curve = ap.ranked;
  if (ap.num_gt == 0) r.warnings.push_back("no ground-truth interactive pairs; interactiveness AP set to 0");
  for (std::size_t k : topk) r.topk[k] = subset_metrics(topk_filter(preds, k), scenes, num_verbs, opt);
  r.count_error = count_error(counts);
  return r;
}

// Curve vertices: (0, 1), the last point of every distinct score threshold,
// then a drop to precision 0 at the final recall.
inline std::vector<std::pair<double, double>> pr_vertices(const std::vector<PrPoint>& ranked) {
  std::vector<std::pair<double, double>> v{{0.0, 1.0}};
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i + 1 < ranked.size() && ranked[i + 1].score == ranked[i].score) continue;
    v.emplace_back(ranked[i].recall, ranked[i].precision);
  }
  v.emplace_back(ranked.empty() ? 0.0 : ranked.back().recall, 0.0);
  return v;
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(12) << x;
  return os.str();
}

inline std::string pr_svg(const std::vector<PrPoint>& ranked, const std::string& title) {
  const auto v = pr_vertices(ranked);
  const double w = 320, h = 320, pad = 40;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * pad << "\" height=\"" << h + 2 * pad
     << "\">\n";
  os << "<title>" << title << "</title>\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << pad + w / 2 << "\" y=\"" << 2 * pad + h - 8 << "\" text-anchor=\"middle\">recall</text>\n";
  os << "<text x=\"12\" y=\"" << pad + h / 2 << "\" transform=\"rotate(-90 12 " << pad + h / 2
     << ")\" text-anchor=\"middle\">precision</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < v.size(); ++i) {
    os << (i ? " " : "") << fmt(pad + v[i].first * w) << "," << fmt(pad + (1.0 - v[i].second) * h);
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

inline nlohmann::json subset_json(const SubsetMetrics& m) {
  nlohmann::json j;
  j["interactiveness_ap"] = m.interactiveness_ap;
  j["verb_map"] = m.verb_map;
  j["predictions"] = m.predictions;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [v, ap] : m.verb_ap) per[std::to_string(v)] = ap;
  j["verb_ap"] = per;
  return j;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["all"] = subset_json(r.all);
  nlohmann::json tk = nlohmann::json::object();
  for (const auto& [k, m] : r.topk) tk["top" + std::to_string(k)] = subset_json(m);
  j["topk"] = tk;
  nlohmann::json ce = nlohmann::json::object();
  for (const auto& [reg, e] : r.count_error) ce[regime_name(reg)] = e;
  j["count_error"] = ce;
  j["num_gt"] = r.num_gt;
  j["warnings"] = r.warnings;
  j["metadata"] = r.metadata;
  return j;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

// report.json, metrics.csv, count_error.csv and pr_interactiveness.svg.
inline void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "report.json", report_json(r).dump(2) + "\n");

  std::ostringstream csv;
  csv << "subset,metric,value\n";
  auto rows = [&](const std::string& name, const SubsetMetrics& m) {
    csv << name << ",interactiveness_ap," << fmt(m.interactiveness_ap) << "\n";
    csv << name << ",verb_map," << fmt(m.verb_map) << "\n";
    for (const auto& [v, ap] : m.verb_ap) csv << name << ",verb_ap_" << v << "," << fmt(ap) << "\n";
    csv << name << ",predictions," << m.predictions << "\n";
  };
  rows("all", r.all);
  for (const auto& [k, m] : r.topk) rows("top" + std::to_string(k), m);
  write_file(dir / "metrics.csv", csv.str());

  std::ostringstream ce;
  ce << "regime,count_error\n";
  for (const auto& [reg, e] : r.count_error) ce << regime_name(reg) << "," << fmt(e) << "\n";
  write_file(dir / "count_error.csv", ce.str());
  write_file(dir / "pr_interactiveness.svg", pr_svg(r.pr_curve, "interactiveness PR"));
}

}  // namespace ifield::eval
