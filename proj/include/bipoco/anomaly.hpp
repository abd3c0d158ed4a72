#pragma once

// Prediction errors to frame-level anomaly scores, plus ROC AUC.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bipoco/data.hpp"
#include "bipoco/skeleton.hpp"

namespace bipoco {

enum class ErrorMode { summed, flattened };

inline std::string to_string(ErrorMode m) { return m == ErrorMode::summed ? "summed" : "flattened"; }

inline ErrorMode parse_error_mode(const std::string& s) {
  if (s == "summed") return ErrorMode::summed;
  if (s == "flattened") return ErrorMode::flattened;
  throw ConfigError("error mode must be 'summed' or 'flattened', got '" + s + "'");
}

/// Confidence-weighted squared pixel error over joints 1..17 (root excluded).
inline double person_error(const JointSet& gt, const JointSet& pred,
                           std::span<const double, kNumKeypoints> weights) {
  double e = 0.0;
  for (int k = 1; k <= kNumKeypoints; ++k) {
    const double w = weights[static_cast<std::size_t>(k - 1)];
    if (!(w >= 0.0)) throw WeightError("joint weights must be non-negative");
    e += w * (gt.joint(k) - pred.joint(k)).squaredNorm();
  }
  return e;
}

inline double person_error(const JointSet& gt, const JointSet& pred) {
  return person_error(gt, pred, std::span<const double, kNumKeypoints>(gt.confidences));
}

/// Per-step person errors of one prediction window.
struct WindowErrors {
  std::string video_id;
  std::string track_id;
  /// Frames predicted by the window, one per step.
  std::vector<int> frames;
  std::vector<double> step_errors;
};

using FrameValues = std::map<int, double>;

/// Each window's score is the sum of its step errors; it is assigned to every
/// frame the window predicts, and overlapping windows are averaged per frame.
inline FrameValues summed_error(std::span<const WindowErrors> windows) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& w : windows) {
    double total = 0.0;
    for (double e : w.step_errors) total += e;
    for (int f : w.frames) {
      auto& [s, n] = acc[f];
      s += total;
      ++n;
    }
  }
  FrameValues out;
  for (const auto& [f, sn] : acc) out[f] = sn.first / sn.second;
  return out;
}

/// Average of the step errors of all windows predicting each frame.
inline FrameValues flattened_error(std::span<const WindowErrors> windows) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& w : windows) {
    for (std::size_t k = 0; k < w.frames.size(); ++k) {
      auto& [s, n] = acc[w.frames[k]];
      s += w.step_errors[k];
      ++n;
    }
  }
  FrameValues out;
  for (const auto& [f, sn] : acc) out[f] = sn.first / sn.second;
  return out;
}

inline FrameValues track_frame_values(std::span<const WindowErrors> windows, ErrorMode mode) {
  return mode == ErrorMode::summed ? summed_error(windows) : flattened_error(windows);
}

/// Max over the pedestrians present at a frame; nullopt when none is.
inline std::optional<double> frame_score(std::span<const double> track_values) {
  if (track_values.empty()) return std::nullopt;
  return *std::max_element(track_values.begin(), track_values.end());
}

struct ScoreRow {
  std::string video_id;
  int frame = 0;
  double score = 0.0;
  int label = 0;
  int hr_mask = 0;
};

struct ScoreOptions {
  ErrorMode mode = ErrorMode::flattened;
  /// Rescale each video's scores to [0, 1].
  bool per_video_minmax = false;
};

/// Frame scores for every frame of each labelled video. Frames no pedestrian
/// scores at receive the video's minimum observed score (0 if it has none).
inline std::vector<ScoreRow> frame_scores(std::span<const WindowErrors> windows,
                                          std::span<const FrameLabelSet> labels,
                                          const ScoreOptions& opt = {}) {
  std::map<std::pair<std::string, std::string>, std::vector<WindowErrors>> by_track;
  for (const auto& w : windows) by_track[{w.video_id, w.track_id}].push_back(w);
  std::map<std::string, std::map<int, std::vector<double>>> present;
  for (const auto& [key, ws] : by_track) {
    for (const auto& [f, v] : track_frame_values(ws, opt.mode)) present[key.first][f].push_back(v);
  }
  std::vector<ScoreRow> out;
  for (const auto& ls : labels) {
    const auto vit = present.find(ls.video_id);
    std::vector<std::optional<double>> raw(ls.frame_count());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const int f = ls.first_frame + static_cast<int>(i);
      if (vit == present.end()) continue;
      const auto fit = vit->second.find(f);
      if (fit == vit->second.end()) continue;
      raw[i] = frame_score(fit->second);
      lo = std::min(lo, *raw[i]);
      hi = std::max(hi, *raw[i]);
    }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const int f = ls.first_frame + static_cast<int>(i);
      double s = raw[i].value_or(lo);
      if (opt.per_video_minmax) s = hi > lo ? (s - lo) / (hi - lo) : 0.0;
      out.push_back({ls.video_id, f, s, ls.label(f), ls.masked(f) ? 1 : 0});
    }
  }
  return out;
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count 1/2.
/// Entries with mask[i] != 0 are dropped first.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels,
                      std::span<const int> mask = {}) {
  if (scores.size() != labels.size() || (!mask.empty() && mask.size() != scores.size())) {
    throw ShapeError("roc_auc: scores, labels and mask must have equal length");
  }
  std::vector<std::pair<double, int>> kept;
  kept.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask.empty() && mask[i] != 0) continue;
    if (!std::isfinite(scores[i])) throw NumericError("roc_auc: non-finite score");
    kept.emplace_back(scores[i], labels[i] != 0 ? 1 : 0);
  }
  std::sort(kept.begin(), kept.end());
  double pos = 0, neg = 0, pos_rank_sum = 0;
  for (std::size_t i = 0; i < kept.size();) {
    std::size_t j = i;
    while (j < kept.size() && kept[j].first == kept[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (kept[k].second) {
        pos += 1;
        pos_rank_sum += avg_rank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw DegenerateLabelsError("AUC needs both normal and anomalous frames");
  return (pos_rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline double roc_auc(std::span<const ScoreRow> rows, bool apply_hr_mask) {
  std::vector<double> s;
  std::vector<int> l, m;
  for (const auto& r : rows) {
    s.push_back(r.score);
    l.push_back(r.label);
    m.push_back(apply_hr_mask ? r.hr_mask : 0);
  }
  return roc_auc(s, l, m);
}

/// (1 / (δ·17)) Σ_t sqrt(Σ_k |Ĵ_kt - J_kt|²) over joints 1..17, in pixels.
inline double joint_error_metric(std::span<const JointSet> pred, std::span<const JointSet> gt) {
  if (pred.empty() || pred.size() != gt.size()) throw ShapeError("joint_error_metric: step mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    double sq = 0.0;
    for (int k = 1; k <= kNumKeypoints; ++k) sq += (pred[t].joint(k) - gt[t].joint(k)).squaredNorm();
    acc += std::sqrt(sq);
  }
  return acc / (static_cast<double>(pred.size()) * kNumKeypoints);
}

// ---- files ------------------------------------------------------------------------

inline void write_score_csv(std::ostream& out, std::span<const ScoreRow> rows) {
  out << "video_id,frame,score,label,hr_mask\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out << r.video_id << ',' << r.frame << ',' << buf << ',' << r.label << ',' << r.hr_mask << '\n';
  }
}

inline void write_score_csv(const std::string& path, std::span<const ScoreRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_score_csv(out, rows);
}

inline std::vector<ScoreRow> parse_score_csv(const std::string& text,
                                             const std::string& source = "<scores>") {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<ScoreRow> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    if (line_no == 1 && !c.empty() && c[0] == "video_id") continue;
    const std::string where = source + " line " + std::to_string(line_no);
    if (c.size() < 3 || c.size() > 5) throw ParseError(where + ": expected 3 to 5 columns");
    ScoreRow r;
    r.video_id = c[0];
    try {
      r.frame = std::stoi(c[1]);
      r.score = std::stod(c[2]);
      r.label = c.size() > 3 ? std::stoi(c[3]) : 0;
      r.hr_mask = c.size() > 4 ? std::stoi(c[4]) : 0;
    } catch (const std::exception&) {
      throw ParseError(where + ": malformed number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ScoreRow> load_score_csv(const std::string& path) {
  return parse_score_csv(read_text_file(path), path);
}

/// Replaces label / hr_mask columns with the values from a label file.
inline void apply_labels(std::vector<ScoreRow>& rows, std::span<const FrameLabelSet> labels) {
  std::map<std::string, const FrameLabelSet*> index;
  for (const auto& l : labels) index[l.video_id] = &l;
  for (auto& r : rows) {
    const auto it = index.find(r.video_id);
    if (it == index.end() || !it->second->contains(r.frame)) {
      throw DataError("no label for video " + r.video_id + " frame " + std::to_string(r.frame));
    }
    r.label = it->second->label(r.frame);
    r.hr_mask = it->second->masked(r.frame) ? 1 : 0;
  }
}

struct JointErrorSummary {
  double normal = std::numeric_limits<double>::quiet_NaN();
  double anomalous = std::numeric_limits<double>::quiet_NaN();
  std::size_t normal_windows = 0;
  std::size_t anomalous_windows = 0;
};

struct TimescaleMetrics {
  int timescale = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double auc_hr = std::numeric_limits<double>::quiet_NaN();
  JointErrorSummary joint_error;
};

struct MetricReport {
  std::string error_mode;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double auc_hr = std::numeric_limits<double>::quiet_NaN();
  JointErrorSummary joint_error;
  std::vector<TimescaleMetrics> per_timescale;
};

namespace detail {
inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}
}  // namespace detail

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["error_mode"] = r.error_mode;
  j["auc"] = detail::number_or_null(r.auc);
  j["auc_hr"] = detail::number_or_null(r.auc_hr);
  j["joint_error_normal"] = detail::number_or_null(r.joint_error.normal);
  j["joint_error_anomalous"] = detail::number_or_null(r.joint_error.anomalous);
  j["per_timescale"] = nlohmann::json::object();
  for (const auto& t : r.per_timescale) {
    j["per_timescale"][std::to_string(t.timescale)] = {
        {"auc", detail::number_or_null(t.auc)},
        {"auc_hr", detail::number_or_null(t.auc_hr)},
        {"joint_error_normal", detail::number_or_null(t.joint_error.normal)},
        {"joint_error_anomalous", detail::number_or_null(t.joint_error.anomalous)}};
  }
  return j;
}

/// AUC over all frames, and over frames outside the HR mask when one is present
/// and leaves both classes.
inline void fill_auc(MetricReport& report, std::span<const ScoreRow> rows) {
  report.auc = roc_auc(rows, false);
  const bool has_mask = std::any_of(rows.begin(), rows.end(), [](const ScoreRow& r) { return r.hr_mask != 0; });
  if (has_mask) {
    try {
      report.auc_hr = roc_auc(rows, true);
    } catch (const DegenerateLabelsError&) {
      report.auc_hr = std::numeric_limits<double>::quiet_NaN();
    }
  } else {
    report.auc_hr = report.auc;
  }
}

}  // namespace bipoco
