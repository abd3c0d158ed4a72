#pragma once

// Pose-file ingestion, per-pedestrian track assembly, sliding windows,
// frame-label files and a synthetic walking-gait generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bipoco/skeleton.hpp"

namespace bipoco {

using Confidences = std::array<double, kNumKeypoints>;

/// A tracked pedestrian's pose series with consecutive frame indices.
struct PoseSequence {
  std::string video_id;
  std::string track_id;
  std::vector<int> frames;
  std::vector<JointSet> poses;

  std::size_t size() const { return frames.size(); }
  bool operator==(const PoseSequence& o) const {
    if (video_id != o.video_id || track_id != o.track_id || frames != o.frames) return false;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const auto& a = poses[i];
      const auto& b = o.poses[i];
      if (a.frame_width != b.frame_width || a.frame_height != b.frame_height ||
          a.confidences != b.confidences) {
        return false;
      }
      for (int n = 1; n <= kNumJoints; ++n) {
        if (a.joint(n) != b.joint(n)) return false;
      }
    }
    return poses.size() == o.poses.size();
  }
};

struct WindowMeta {
  std::string video_id;
  std::string track_id;
  int start_frame = 0;
  double frame_width = 0.0;
  double frame_height = 0.0;
};

/// τ observed and δ target steps from one track, in root+bone features.
struct WindowedSample {
  std::vector<BoneSet> observation;
  std::vector<BoneSet> target;
  /// Confidences for all τ+δ frames.
  std::vector<Confidences> confidences;
  /// Source poses of the δ target frames, in pixels.
  std::vector<JointSet> target_joints;
  WindowMeta meta;

  int tau() const { return static_cast<int>(observation.size()); }
  int delta() const { return static_cast<int>(target.size()); }
  /// Frame index predicted by target step k (0-based).
  int target_frame(int k) const { return meta.start_frame + tau() + k; }
};

/// Per-frame anomaly labels of one video; frames are first_frame .. first_frame+N-1.
struct FrameLabelSet {
  std::string video_id;
  int first_frame = 0;
  std::vector<std::uint8_t> labels;
  /// 1 marks frames excluded from the human-related evaluation subset; empty if absent.
  std::vector<std::uint8_t> hr_mask;

  std::size_t frame_count() const { return labels.size(); }
  bool contains(int frame) const {
    return frame >= first_frame && frame < first_frame + static_cast<int>(labels.size());
  }
  int label(int frame) const { return labels.at(static_cast<std::size_t>(frame - first_frame)); }
  bool masked(int frame) const {
    return !hr_mask.empty() && hr_mask.at(static_cast<std::size_t>(frame - first_frame)) != 0;
  }
};

// ---- pose files --------------------------------------------------------------

struct PoseRecord {
  std::string video_id;
  std::string track_id;
  int frame = 0;
  JointSet pose;
};

namespace detail {

inline std::string json_id(const nlohmann::json& v, const char* key, const std::string& where) {
  const auto it = v.find(key);
  if (it == v.end()) throw ParseError(where + ": missing field '" + key + "'");
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw ParseError(where + ": field '" + key + "' must be a string");
}

inline double json_number(const nlohmann::json& v, const char* key, const std::string& where) {
  const auto it = v.find(key);
  if (it == v.end() || !it->is_number()) {
    throw ParseError(where + ": field '" + key + "' missing or not a number");
  }
  return it->get<double>();
}

inline PoseRecord parse_record(const nlohmann::json& v, const std::string& where) {
  if (!v.is_object()) throw ParseError(where + ": record is not a JSON object");
  PoseRecord r;
  r.video_id = json_id(v, "video_id", where);
  r.track_id = json_id(v, "track_id", where);
  const auto fit = v.find("frame");
  if (fit == v.end() || !fit->is_number_integer()) {
    throw ParseError(where + ": field 'frame' missing or not an integer");
  }
  r.frame = fit->get<int>();
  const double width = json_number(v, "width", where);
  const double height = json_number(v, "height", where);
  const auto kit = v.find("keypoints");
  if (kit == v.end() || !kit->is_array()) throw ParseError(where + ": field 'keypoints' missing");
  if (kit->size() != 3 * kNumKeypoints) {
    throw SchemaError(where + ": expected 17 keypoints (51 numbers), got " +
                      std::to_string(kit->size()) + " numbers");
  }
  std::array<Point, kNumKeypoints> kp;
  Confidences conf{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const auto& x = (*kit)[3 * i];
    const auto& y = (*kit)[3 * i + 1];
    const auto& c = (*kit)[3 * i + 2];
    if (!x.is_number() || !y.is_number() || !c.is_number()) {
      throw ParseError(where + ": keypoint " + std::to_string(i + 1) + " is not numeric");
    }
    kp[i] = Point(x.get<double>(), y.get<double>());
    conf[i] = c.get<double>();
  }
  try {
    check_frame_dims(width, height);
  } catch (const DimensionError&) {
    throw SchemaError(where + ": width and height must be positive");
  }
  r.pose = make_joint_set(kp, conf, width, height);
  return r;
}

}  // namespace detail

/// Parses JSON-Lines or a top-level JSON array of pose records.
inline std::vector<PoseRecord> parse_pose_records(const std::string& text,
                                                  const std::string& source = "<input>") {
  std::vector<PoseRecord> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return out;
  if (text[first] == '[') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source + ": " + e.what());
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
      out.push_back(detail::parse_record(doc[i], source + " record " + std::to_string(i + 1)));
    }
    return out;
  }
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + " line " + std::to_string(line_no);
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    out.push_back(detail::parse_record(v, where));
  }
  return out;
}

/// Groups records by (video, track), sorts by frame and splits tracks at any
/// frame gap. Output is ordered by (video_id, track_id, first frame).
inline std::vector<PoseSequence> assemble_sequences(std::vector<PoseRecord> records) {
  std::sort(records.begin(), records.end(), [](const PoseRecord& a, const PoseRecord& b) {
    return std::tie(a.video_id, a.track_id, a.frame) < std::tie(b.video_id, b.track_id, b.frame);
  });
  std::vector<PoseSequence> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool continues = !out.empty() && out.back().video_id == r.video_id &&
                           out.back().track_id == r.track_id;
    if (continues && out.back().frames.back() == r.frame) {
      throw DataError("duplicate frame " + std::to_string(r.frame) + " for video " + r.video_id +
                      " track " + r.track_id);
    }
    if (!continues || out.back().frames.back() + 1 != r.frame) {
      out.push_back(PoseSequence{r.video_id, r.track_id, {}, {}});
    }
    out.back().frames.push_back(r.frame);
    out.back().poses.push_back(r.pose);
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<PoseSequence> load_pose_file(const std::string& path) {
  return assemble_sequences(parse_pose_records(read_text_file(path), path));
}

inline nlohmann::json pose_record_json(const std::string& video_id, const std::string& track_id,
                                       int frame, const JointSet& pose) {
  nlohmann::json kp = nlohmann::json::array();
  for (int n = 1; n <= kNumKeypoints; ++n) {
    kp.push_back(pose.joint(n).x());
    kp.push_back(pose.joint(n).y());
    kp.push_back(pose.confidence(n));
  }
  return {{"video_id", video_id}, {"frame", frame},          {"track_id", track_id},
          {"width", pose.frame_width}, {"height", pose.frame_height}, {"keypoints", kp}};
}

/// Writes sequences as JSON-Lines, one record per (track, frame).
inline void write_pose_file(const std::string& path, const std::vector<PoseSequence>& sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : sequences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << pose_record_json(s.video_id, s.track_id, s.frames[i], s.poses[i]).dump() << '\n';
    }
  }
}

// ---- windows -------------------------------------------------------------------

inline std::vector<WindowedSample> make_windows(const PoseSequence& seq, int tau, int delta,
                                                int stride = 1) {
  if (tau < 1 || delta < 1) throw ConfigError("tau and delta must be >= 1");
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  std::vector<WindowedSample> out;
  const int len = static_cast<int>(seq.size());
  for (int start = 0; start + tau + delta <= len; start += stride) {
    WindowedSample w;
    const auto& first = seq.poses[static_cast<std::size_t>(start)];
    w.meta = {seq.video_id, seq.track_id, seq.frames[static_cast<std::size_t>(start)],
              first.frame_width, first.frame_height};
    for (int k = 0; k < tau + delta; ++k) {
      const JointSet& p = seq.poses[static_cast<std::size_t>(start + k)];
      (k < tau ? w.observation : w.target).push_back(pose_to_bones(p));
      w.confidences.push_back(p.confidences);
      if (k >= tau) w.target_joints.push_back(p);
    }
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<WindowedSample> make_windows(const std::vector<PoseSequence>& seqs, int tau,
                                                int delta, int stride = 1) {
  std::vector<WindowedSample> out;
  for (const auto& s : seqs) {
    auto w = make_windows(s, tau, delta, stride);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

// ---- frame labels ----------------------------------------------------------------

/// CSV with header video_id,frame,label,hr_mask. Frames of each video must be contiguous.
inline std::vector<FrameLabelSet> parse_label_csv(const std::string& text,
                                                  const std::string& source = "<labels>") {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  struct Row {
    int frame;
    int label;
    int mask;
  };
  std::map<std::string, std::vector<Row>> by_video;
  bool saw_mask = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line_no == 1 && !cells.empty() && cells[0] == "video_id") continue;
    const std::string where = source + " line " + std::to_string(line_no);
    if (cells.size() < 3 || cells.size() > 4) throw ParseError(where + ": expected 3 or 4 columns");
    Row r{};
    try {
      r.frame = std::stoi(cells[1]);
      r.label = std::stoi(cells[2]);
      r.mask = cells.size() == 4 ? std::stoi(cells[3]) : 0;
    } catch (const std::exception&) {
      throw ParseError(where + ": non-integer field");
    }
    if ((r.label != 0 && r.label != 1) || (r.mask != 0 && r.mask != 1)) {
      throw ParseError(where + ": label and hr_mask must be 0 or 1");
    }
    saw_mask = saw_mask || cells.size() == 4;
    by_video[cells[0]].push_back(r);
  }
  std::vector<FrameLabelSet> out;
  for (auto& [video, rows] : by_video) {
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.frame < b.frame; });
    FrameLabelSet s;
    s.video_id = video;
    s.first_frame = rows.front().frame;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].frame != s.first_frame + static_cast<int>(i)) {
        throw ParseError(source + ": frames of video " + video + " are not contiguous");
      }
      s.labels.push_back(static_cast<std::uint8_t>(rows[i].label));
      if (saw_mask) s.hr_mask.push_back(static_cast<std::uint8_t>(rows[i].mask));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<FrameLabelSet> load_label_file(const std::string& path) {
  return parse_label_csv(read_text_file(path), path);
}

inline void write_label_file(const std::string& path, const std::vector<FrameLabelSet>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "video_id,frame,label,hr_mask\n";
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      out << s.video_id << ',' << s.first_frame + static_cast<int>(i) << ','
          << int(s.labels[i]) << ',' << (s.hr_mask.empty() ? 0 : int(s.hr_mask[i])) << '\n';
    }
  }
}

// ---- synthetic gait ----------------------------------------------------------------

enum class AnomalyKind { jump, flail, run };

inline std::string to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::jump: return "jump";
    case AnomalyKind::flail: return "flail";
    case AnomalyKind::run: return "run";
  }
  return "?";
}

inline AnomalyKind parse_anomaly_kind(const std::string& s) {
  if (s == "jump") return AnomalyKind::jump;
  if (s == "flail") return AnomalyKind::flail;
  if (s == "run") return AnomalyKind::run;
  throw ConfigError("unknown anomaly kind '" + s + "' (expected jump, flail or run)");
}

/// Frames [start, end) of track `track` deviate from normal walking.
struct AnomalySegment {
  int track = 0;
  int start = 0;
  int end = 0;
  AnomalyKind kind = AnomalyKind::jump;
};

struct SynthOptions {
  std::string video_id = "synth";
  double width = 640.0;
  double height = 360.0;
  /// Detector jitter, pixels (standard deviation).
  double noise_px = 0.5;
  double min_confidence = 0.5;
};

struct SynthResult {
  std::vector<PoseSequence> sequences;
  FrameLabelSet labels;
};

namespace detail {

struct GaitParams {
  double direction;  // +1 walks right, -1 left
  double speed;      // px / frame
  double drift;      // vertical px / frame
  double height;     // body height in px
  double frequency;  // gait cycles / frame
  double phase;
  double x0, y0;
  double arm_amp, leg_amp;
};

inline std::array<Point, kNumKeypoints> gait_pose(const GaitParams& g, Point hip, double theta,
                                                  double arm_amp, double leg_amp, double knee_extra,
                                                  double arm_raise) {
  const double H = g.height;
  const double s = g.direction;
  std::array<Point, kNumKeypoints> kp;
  auto at = [&kp](int n) -> Point& { return kp[static_cast<std::size_t>(n - 1)]; };
  const Point shoulder_c = hip + Point(0.02 * H * s, -0.30 * H);
  const double sw = 0.06 * H, hw = 0.045 * H;
  at(6) = shoulder_c + Point(-sw * s, 0.0);
  at(7) = shoulder_c + Point(sw * s, 0.0);
  at(12) = hip + Point(-hw * s, 0.0);
  at(13) = hip + Point(hw * s, 0.0);
  at(1) = shoulder_c + Point(0.04 * H * s, -0.12 * H);
  at(2) = at(1) + Point(-0.012 * H, -0.015 * H);
  at(3) = at(1) + Point(0.012 * H, -0.015 * H);
  at(4) = at(1) + Point(-0.035 * H * s, -0.005 * H);
  at(5) = at(1) + Point(0.005 * H * s, -0.005 * H);
  auto limb = [s](Point base, double angle, double len) -> Point {
    return base + Point(s * len * std::sin(angle), len * std::cos(angle));
  };
  const double upper = 0.15 * H, fore = 0.14 * H, thigh = 0.24 * H, shin = 0.24 * H;
  const double a_left = arm_amp * std::sin(theta) + arm_raise;
  const double a_right = -arm_amp * std::sin(theta) + arm_raise;
  at(8) = limb(at(6), a_left, upper);
  at(9) = limb(at(7), a_right, upper);
  at(10) = limb(at(8), a_left + 0.3 + 0.15 * std::sin(theta), fore);
  at(11) = limb(at(9), a_right + 0.3 - 0.15 * std::sin(theta), fore);
  const double l_left = -leg_amp * std::sin(theta);
  const double l_right = leg_amp * std::sin(theta);
  const double k_left = 0.35 * std::max(0.0, std::sin(theta + 0.5)) + knee_extra;
  const double k_right = 0.35 * std::max(0.0, -std::sin(theta + 0.5)) + knee_extra;
  at(14) = limb(at(12), l_left, thigh);
  at(15) = limb(at(13), l_right, thigh);
  at(16) = limb(at(14), l_left - k_left, shin);
  at(17) = limb(at(15), l_right - k_right, shin);
  return kp;
}

}  // namespace detail

/// Generates one video of `n_tracks` pedestrians walking for `n_frames` frames
/// (frames 0..n_frames-1). Normal tracks follow a sinusoidal limb-swing model
/// with constant root velocity; segments in `anomalies` switch a track into a
/// jump, arm-flail or run pattern. Labels are 1 exactly on anomalous frames.
inline SynthResult synth_gait(int n_tracks, int n_frames, const std::vector<AnomalySegment>& anomalies,
                              std::uint64_t seed, const SynthOptions& opt = {}) {
  if (n_tracks < 0 || n_frames < 0) throw ConfigError("track and frame counts must be >= 0");
  check_frame_dims(opt.width, opt.height);
  for (const auto& a : anomalies) {
    if (a.track < 0 || a.track >= n_tracks || a.start < 0 || a.end > n_frames || a.start >= a.end) {
      throw ConfigError("anomaly segment out of range");
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> jitter(0.0, 1.0);

  SynthResult out;
  out.labels.video_id = opt.video_id;
  out.labels.first_frame = 0;
  out.labels.labels.assign(static_cast<std::size_t>(n_frames), 0);
  for (const auto& a : anomalies) {
    for (int f = a.start; f < a.end; ++f) out.labels.labels[static_cast<std::size_t>(f)] = 1;
  }

  for (int t = 0; t < n_tracks; ++t) {
    detail::GaitParams g{};
    g.direction = u01(rng) < 0.5 ? -1.0 : 1.0;
    g.speed = uniform(0.8, 1.8);
    g.drift = uniform(-0.25, 0.25);
    g.height = uniform(90.0, 140.0);
    g.frequency = uniform(0.035, 0.05);
    g.phase = uniform(0.0, 2.0 * std::numbers::pi);
    g.x0 = uniform(0.15, 0.85) * opt.width;
    g.y0 = uniform(0.45, 0.75) * opt.height;
    g.arm_amp = uniform(0.25, 0.4);
    g.leg_amp = uniform(0.3, 0.45);

    std::vector<const AnomalySegment*> mine;
    for (const auto& a : anomalies) {
      if (a.track == t) mine.push_back(&a);
    }

    PoseSequence seq;
    seq.video_id = opt.video_id;
    seq.track_id = std::to_string(t);
    Point hip(g.x0, g.y0);
    double theta = g.phase;
    for (int f = 0; f < n_frames; ++f) {
      const AnomalySegment* active = nullptr;
      for (const auto* a : mine) {
        if (f >= a->start && f < a->end) active = a;
      }
      double speed = g.speed, freq = g.frequency, arm_amp = g.arm_amp, leg_amp = g.leg_amp;
      double knee_extra = 0.0, arm_raise = 0.0;
      Point offset = Point::Zero();
      if (active != nullptr) {
        const double len = active->end - active->start;
        const double u = (f - active->start + 0.5) / len;
        switch (active->kind) {
          case AnomalyKind::jump: {
            const double hop = std::abs(std::sin(std::numbers::pi * 3.0 * u));
            offset = Point(0.0, -0.45 * g.height * hop);
            knee_extra = 1.0 * hop;
            arm_raise = 1.4 * hop;
            break;
          }
          case AnomalyKind::flail:
            arm_amp = 2.2;
            freq = 3.0 * g.frequency;
            arm_raise = 1.2;
            speed = 0.3 * g.speed;
            break;
          case AnomalyKind::run:
            speed = 4.0 * g.speed;
            freq = 2.5 * g.frequency;
            arm_amp = 2.0 * g.arm_amp;
            leg_amp = 1.8 * g.leg_amp;
            knee_extra = 0.4;
            break;
        }
      }
      const double bob = -0.012 * g.height * std::abs(std::cos(theta));
      const Point root_hip = hip + offset + Point(0.0, bob);
      auto kp = detail::gait_pose(g, root_hip, theta, arm_amp, leg_amp, knee_extra, arm_raise);
      Confidences conf{};
      for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        kp[k] += opt.noise_px * Point(jitter(rng), jitter(rng));
        conf[k] = uniform(opt.min_confidence, 1.0);
      }
      seq.frames.push_back(f);
      seq.poses.push_back(make_joint_set(kp, conf, opt.width, opt.height));
      hip += Point(g.direction * speed, g.drift);
      theta += 2.0 * std::numbers::pi * freq;
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

/// Several synthetic videos; each gets `anomalous_tracks` randomly placed
/// segments of `segment_length` frames with a randomly drawn kind.
struct SynthDatasetOptions {
  int videos = 1;
  int tracks = 4;
  int frames = 120;
  int anomalous_tracks = 0;
  int segment_length = 20;
  /// Segments start no earlier than this frame.
  int segment_margin = 6;
  std::string video_prefix = "synth";
  SynthOptions base;
};

inline std::vector<SynthResult> synth_dataset(const SynthDatasetOptions& o, std::uint64_t seed) {
  if (o.videos < 0) throw ConfigError("video count must be >= 0");
  if (o.anomalous_tracks < 0 || o.anomalous_tracks > o.tracks) {
    throw ConfigError("anomalous_tracks must lie in [0, tracks]");
  }
  if (o.anomalous_tracks > 0 && (o.segment_length < 1 || o.segment_margin < 0 ||
                                 o.segment_margin + o.segment_length > o.frames)) {
    throw ConfigError("anomaly segment does not fit in the video");
  }
  std::mt19937_64 rng(seed);
  std::vector<SynthResult> out;
  for (int v = 0; v < o.videos; ++v) {
    std::vector<int> ids(static_cast<std::size_t>(o.tracks));
    for (int t = 0; t < o.tracks; ++t) ids[static_cast<std::size_t>(t)] = t;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<AnomalySegment> segs;
    for (int i = 0; i < o.anomalous_tracks; ++i) {
      std::uniform_int_distribution<int> start(o.segment_margin, o.frames - o.segment_length);
      std::uniform_int_distribution<int> kind(0, 2);
      const int s = start(rng);
      segs.push_back({ids[static_cast<std::size_t>(i)], s, s + o.segment_length,
                      static_cast<AnomalyKind>(kind(rng))});
    }
    SynthOptions opt = o.base;
    char name[32];
    std::snprintf(name, sizeof name, "_%03d", v);
    opt.video_id = o.video_prefix + name;
    out.push_back(synth_gait(o.tracks, o.frames, segs, rng(), opt));
  }
  return out;
}

}  // namespace bipoco
