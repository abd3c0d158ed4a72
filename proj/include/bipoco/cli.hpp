#pragma once

// bipoco command line: prepare, synth, train, score, eval, plot.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bipoco/anomaly.hpp"
#include "bipoco/checkpoint.hpp"
#include "bipoco/data.hpp"
#include "bipoco/training.hpp"

namespace bipoco::cli {

namespace fs = std::filesystem;

// ---- window archive --------------------------------------------------------------
//
// The archive stores the assembled pose sequences (not the expanded windows)
// together with τ, δ, stride and a manifest of window counts; windows are
// rebuilt deterministically on load.

struct Archive {
  int tau = 3;
  int delta = 3;
  int stride = 1;
  std::vector<PoseSequence> sequences;

  std::vector<WindowedSample> windows() const { return make_windows(sequences, tau, delta, stride); }
};

inline nlohmann::json manifest(const Archive& a) {
  nlohmann::json videos = nlohmann::json::object();
  std::size_t total = 0;
  for (const auto& s : a.sequences) {
    const int len = static_cast<int>(s.size());
    const int span = a.tau + a.delta;
    const std::size_t n = len < span ? 0 : static_cast<std::size_t>((len - span) / a.stride + 1);
    auto& v = videos[s.video_id];
    if (!v.contains("windows")) {
      v["windows"] = 0;
      v["tracks"] = nlohmann::json::object();
    }
    // Split tracks share an id, so counts accumulate.
    v["tracks"][s.track_id] = v["tracks"].value(s.track_id, std::size_t{0}) + n;
    v["windows"] = v["windows"].get<std::size_t>() + n;
    total += n;
  }
  return {{"tau", a.tau}, {"delta", a.delta}, {"stride", a.stride},
          {"sequences", a.sequences.size()}, {"windows", total}, {"videos", videos}};
}

inline nlohmann::json to_json(const Archive& a) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& s : a.sequences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      records.push_back(pose_record_json(s.video_id, s.track_id, s.frames[i], s.poses[i]));
    }
  }
  return {{"format", "bipoco-windows-1"}, {"manifest", manifest(a)}, {"records", records}};
}

inline Archive archive_from_json(const nlohmann::json& j, const std::string& source) {
  if (!j.is_object() || j.value("format", "") != "bipoco-windows-1") {
    throw ParseError(source + ": not a bipoco window archive");
  }
  Archive a;
  try {
    const auto& m = j.at("manifest");
    a.tau = m.at("tau").get<int>();
    a.delta = m.at("delta").get<int>();
    a.stride = m.at("stride").get<int>();
    a.sequences = assemble_sequences(parse_pose_records(j.at("records").dump(), source));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  return a;
}

inline void save_archive(const std::string& path, const Archive& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(a).dump() << '\n';
}

inline Archive load_archive(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return archive_from_json(j, path);
}

/// Pose records from a single file, or from every *.json / *.jsonl file of a directory.
inline std::vector<PoseSequence> load_pose_path(const std::string& path, std::ostream& log) {
  if (!fs::exists(path)) throw DataError("no such file or directory: " + path);
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".json" || ext == ".jsonl")) files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) log << "warning: no pose files in " << path << "\n";
  } else {
    files.push_back(path);
  }
  std::vector<PoseRecord> all;
  for (const auto& f : files) {
    auto r = parse_pose_records(read_text_file(f), f);
    std::move(r.begin(), r.end(), std::back_inserter(all));
  }
  return assemble_sequences(std::move(all));
}

// ---- score-vs-frame plots ------------------------------------------------------------

/// One static SVG per video: score curve with anomalous frames shaded.
inline std::vector<std::string> plot_scores(std::span<const ScoreRow> rows, const std::string& out_dir) {
  if (rows.empty()) throw DataError("score file has no rows to plot");
  std::map<std::string, std::vector<const ScoreRow*>> by_video;
  for (const auto& r : rows) by_video[r.video_id].push_back(&r);
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  constexpr double W = 960, H = 280, L = 60, R = 20, T = 30, B = 40;
  for (auto& [video, vr] : by_video) {
    std::sort(vr.begin(), vr.end(), [](auto* a, auto* b) { return a->frame < b->frame; });
    const double f0 = vr.front()->frame, f1 = std::max<double>(vr.back()->frame, f0 + 1);
    double smax = 0.0;
    for (auto* r : vr) smax = std::max(smax, r->score);
    if (!(smax > 0.0)) smax = 1.0;
    auto x = [&](double f) { return L + (f - f0) / (f1 - f0) * (W - L - R); };
    auto y = [&](double s) { return H - B - s / smax * (H - T - B); };
    const double step = (W - L - R) / (f1 - f0);
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (auto* r : vr) {
      if (r->label == 1) {
        svg << "<rect x=\"" << x(r->frame) - step / 2 << "\" y=\"" << T << "\" width=\"" << step
            << "\" height=\"" << H - T - B << "\" fill=\"#f4b6b6\"/>\n";
      }
    }
    svg << "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"";
    for (auto* r : vr) svg << x(r->frame) << ',' << y(r->score) << ' ';
    svg << "\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << video
        << "</text>\n"
        << "<text x=\"" << L << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">frame "
        << vr.front()->frame << "</text>\n"
        << "<text x=\"" << W - R - 80 << "\" y=\"" << H - 12
        << "\" font-family=\"sans-serif\" font-size=\"11\">frame " << vr.back()->frame << "</text>\n"
        << "<text x=\"4\" y=\"" << T + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << smax
        << "</text>\n"
        << "</svg>\n";
    std::string name = video;
    std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
    const std::string path = (fs::path(out_dir) / (name + ".svg")).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << svg.str();
    written.push_back(path);
  }
  return written;
}

// ---- commands ---------------------------------------------------------------------------

struct RunConfig {
  std::string poses;
  std::string labels;
  std::string archive;
  std::string checkpoint;
  std::string scores;
  std::string out;
  std::string report;
  int timescale = 0;
  int tau = 3;
  int delta = 3;
  int stride = 1;
  std::string losses = "all";
  std::string endpoint_parents = "ground_truth";
  std::string error_mode = "flattened";
  std::string latent_mode = "mean";
  int k_samples = 1;
  bool hr_mask = false;
  bool per_video_minmax = false;
  int inference_batch = 256;
  TrainConfig train;
  // synth
  int videos = 1;
  int tracks = 4;
  int frames = 120;
  int anomalous_tracks = 0;
  int segment_length = 20;
  std::vector<std::string> anomalies;
  double width = 640.0;
  double height = 360.0;
  double noise_px = 0.5;
  std::uint64_t seed = 0;
};

inline std::string fmt(double v) { return nlohmann::json(v).dump(); }

inline void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(dir);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

inline AnomalySegment parse_segment(const std::string& text) {
  // track:start:end[:kind]
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() < 3 || parts.size() > 4) throw ConfigError("--anomaly expects track:start:end[:kind]");
  AnomalySegment s;
  try {
    s.track = std::stoi(parts[0]);
    s.start = std::stoi(parts[1]);
    s.end = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw ConfigError("--anomaly expects integers in track:start:end");
  }
  if (parts.size() == 4) s.kind = parse_anomaly_kind(parts[3]);
  return s;
}

inline void cmd_prepare(const RunConfig& c, std::ostream& log) {
  Archive a;
  a.tau = c.timescale > 0 ? c.timescale : c.tau;
  a.delta = c.timescale > 0 ? c.timescale : c.delta;
  a.stride = c.stride;
  if (a.tau < 1 || a.delta < 1 || a.stride < 1) throw ConfigError("tau, delta and stride must be >= 1");
  a.sequences = load_pose_path(c.poses, log);
  if (c.out.empty()) throw ConfigError("--out is required");
  if (const auto parent = fs::path(c.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_archive(c.out, a);
  const auto m = manifest(a);
  if (m["windows"].get<std::size_t>() == 0) log << "warning: archive contains no windows\n";
  log << m.dump() << "\n";
}

inline void cmd_synth(const RunConfig& c, std::ostream& log) {
  ensure_dir(c.out);
  std::vector<SynthResult> results;
  if (!c.anomalies.empty()) {
    std::vector<AnomalySegment> segs;
    for (const auto& a : c.anomalies) segs.push_back(parse_segment(a));
    SynthOptions opt;
    opt.width = c.width;
    opt.height = c.height;
    opt.noise_px = c.noise_px;
    results.push_back(synth_gait(c.tracks, c.frames, segs, c.seed, opt));
  } else {
    SynthDatasetOptions o;
    o.videos = c.videos;
    o.tracks = c.tracks;
    o.frames = c.frames;
    o.anomalous_tracks = c.anomalous_tracks;
    o.segment_length = c.segment_length;
    o.base.width = c.width;
    o.base.height = c.height;
    o.base.noise_px = c.noise_px;
    results = synth_dataset(o, c.seed);
  }
  std::vector<PoseSequence> seqs;
  std::vector<FrameLabelSet> labels;
  std::size_t anomalous = 0, frames = 0;
  for (auto& r : results) {
    for (auto& s : r.sequences) seqs.push_back(std::move(s));
    anomalous += static_cast<std::size_t>(std::count(r.labels.labels.begin(), r.labels.labels.end(), 1));
    frames += r.labels.labels.size();
    labels.push_back(std::move(r.labels));
  }
  write_pose_file((fs::path(c.out) / "poses.jsonl").string(), seqs);
  write_label_file((fs::path(c.out) / "labels.csv").string(), labels);
  log << "wrote " << seqs.size() << " tracks, " << frames << " frames, anomalous fraction "
      << fmt(frames ? static_cast<double>(anomalous) / static_cast<double>(frames) : 0.0) << "\n";
}

inline void cmd_train(RunConfig c, const std::string& resolved_config, std::ostream& log) {
  ensure_dir(c.out);
  const Archive a = load_archive(c.archive);
  if (c.timescale > 0 && (c.timescale != a.tau || c.timescale != a.delta)) {
    throw ConfigError("--timescale " + std::to_string(c.timescale) + " does not match the archive (tau=" +
                      std::to_string(a.tau) + ", delta=" + std::to_string(a.delta) + ")");
  }
  TrainConfig& t = c.train;
  t.tau = t.model.tau = a.tau;
  t.delta = t.model.delta = a.delta;
  t.mask = losses::LossMask::parse(c.losses);
  if (c.endpoint_parents == "ground_truth") {
    t.endpoint_parents = losses::EndpointParents::ground_truth;
  } else if (c.endpoint_parents == "predicted") {
    t.endpoint_parents = losses::EndpointParents::predicted;
  } else {
    throw ConfigError("--endpoint-parents must be ground_truth or predicted");
  }
  write_text((fs::path(c.out) / "config.ini").string(), resolved_config);
  const auto windows = a.windows();
  std::ofstream metrics((fs::path(c.out) / "metrics.jsonl").string(), std::ios::binary);
  TrainOptions opt;
  opt.metrics = &metrics;
  opt.checkpoint_dir = c.out;
  const TrainResult r = train(t, windows, opt);
  save_checkpoint((fs::path(c.out) / "model.ckpt").string(), r.model, r.steps, t.rng_seed, to_json(t));
  log << "trained " << r.steps << " steps over " << r.epochs_run << " epochs on " << windows.size()
      << " windows; final total " << fmt(r.last.loss.total) << ", lr " << fmt(r.final_lr) << "\n";
}

inline void cmd_score(const RunConfig& c, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(c.checkpoint);
  const Archive a = load_archive(c.archive);
  const auto windows = a.windows();
  std::vector<FrameLabelSet> labels;
  if (!c.labels.empty()) labels = load_label_file(c.labels);
  InferenceOptions inf;
  inf.latent_mode = parse_latent_mode(c.latent_mode);
  inf.k_samples = c.k_samples;
  inf.seed = c.seed;
  inf.batch_size = c.inference_batch;
  const ErrorMode mode = parse_error_mode(c.error_mode);
  const auto preds = predict_windows(ck.model, windows, inf);
  const auto errors = window_errors(windows, preds);
  const bool labelled = !labels.empty();
  if (!labelled) {
    // Unlabelled archive: score every predicted frame of each video, all marked 0.
    std::map<std::string, std::pair<int, int>> span;
    for (const auto& e : errors) {
      for (int f : e.frames) {
        auto [it, fresh] = span.try_emplace(e.video_id, f, f);
        it->second.first = std::min(it->second.first, f);
        it->second.second = std::max(it->second.second, f);
      }
    }
    for (const auto& [video, lo_hi] : span) {
      FrameLabelSet l;
      l.video_id = video;
      l.first_frame = lo_hi.first;
      l.labels.assign(static_cast<std::size_t>(lo_hi.second - lo_hi.first + 1), 0);
      labels.push_back(std::move(l));
    }
  }
  const auto rows = frame_scores(errors, labels, {mode, c.per_video_minmax});
  if (c.out.empty()) throw ConfigError("--out is required");
  write_score_csv(c.out, rows);
  MetricReport rep;
  rep.error_mode = to_string(mode);
  rep.joint_error = split_joint_error(windows, preds, labels);
  if (labelled) fill_auc(rep, rows);
  const std::string report = c.report.empty() ? c.out + ".json" : c.report;
  write_text(report, to_json(rep).dump(2) + "\n");
  log << "scored " << rows.size() << " frames from " << windows.size() << " windows\n";
}

inline void cmd_eval(const RunConfig& c, std::ostream& out) {
  auto rows = load_score_csv(c.scores);
  if (!c.labels.empty()) {
    const auto labels = load_label_file(c.labels);
    apply_labels(rows, labels);
  }
  MetricReport rep;
  rep.error_mode = c.error_mode;
  rep.auc = roc_auc(rows, false);
  out << "auc " << fmt(rep.auc) << "\n";
  if (c.hr_mask) {
    rep.auc_hr = roc_auc(rows, true);
    out << "auc_hr " << fmt(rep.auc_hr) << "\n";
  }
  if (!c.report.empty()) write_text(c.report, to_json(rep).dump(2) + "\n");
}

inline void cmd_plot(const RunConfig& c, std::ostream& log) {
  auto rows = load_score_csv(c.scores);
  if (!c.labels.empty()) apply_labels(rows, load_label_file(c.labels));
  if (c.out.empty()) throw ConfigError("--out is required");
  for (const auto& p : plot_scores(rows, c.out)) log << p << "\n";
}

inline int exit_code(const std::exception& e) {
  if (const auto* b = dynamic_cast<const Error*>(&e)) return static_cast<int>(b->code());
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return static_cast<int>(ExitCode::data);
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return static_cast<int>(ExitCode::data);
  return static_cast<int>(ExitCode::config);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pose-trajectory forecasting and skeleton-based video anomaly scoring"};
  app.require_subcommand(1);
  RunConfig c;
  TrainConfig& t = c.train;

  auto* prepare = app.add_subcommand("prepare", "Assemble tracks from pose files into a window archive");
  prepare->add_option("--poses", c.poses, "Pose JSON/JSONL file or directory")->required();
  prepare->add_option("--out", c.out, "Archive path")->required();
  prepare->add_option("--timescale", c.timescale, "Sets tau = delta");
  prepare->add_option("--tau", c.tau, "Observed steps")->capture_default_str();
  prepare->add_option("--delta", c.delta, "Predicted steps")->capture_default_str();
  prepare->add_option("--stride", c.stride, "Window stride")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate synthetic walking tracks with labelled anomalies");
  synth->add_option("--out", c.out, "Output directory")->required();
  synth->add_option("--seed", c.seed)->capture_default_str();
  synth->add_option("--videos", c.videos)->capture_default_str();
  synth->add_option("--tracks", c.tracks, "Tracks per video")->capture_default_str();
  synth->add_option("--frames", c.frames, "Frames per video")->capture_default_str();
  synth->add_option("--anomalous-tracks", c.anomalous_tracks, "Random anomaly segments per video")
      ->capture_default_str();
  synth->add_option("--segment-length", c.segment_length)->capture_default_str();
  synth->add_option("--anomaly", c.anomalies, "Explicit segment track:start:end[:jump|flail|run]; single video");
  synth->add_option("--width", c.width)->capture_default_str();
  synth->add_option("--height", c.height)->capture_default_str();
  synth->add_option("--noise", c.noise_px, "Keypoint jitter in pixels")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train a predictor on a window archive");
  train_cmd->set_config("--config", "", "Key-value config file");
  train_cmd->add_option("--archive", c.archive)->required();
  train_cmd->add_option("--out", c.out, "Output directory")->required();
  train_cmd->add_option("--timescale", c.timescale, "Expected tau = delta of the archive");
  train_cmd->add_option("--losses", c.losses, "Pose constraints: all, none, or letters of B,E,J")->capture_default_str();
  train_cmd->add_option("--endpoint-parents", c.endpoint_parents)->capture_default_str();
  train_cmd->add_option("--alpha", t.weights.alpha)->capture_default_str();
  train_cmd->add_option("--beta", t.weights.beta)->capture_default_str();
  train_cmd->add_option("--gamma", t.weights.gamma)->capture_default_str();
  train_cmd->add_option("--epochs", t.epochs)->capture_default_str();
  train_cmd->add_option("--max-steps", t.max_steps, "0 runs all epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", t.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", t.base_lr)->capture_default_str();
  train_cmd->add_option("--lr-decay", t.lr_decay_factor)->capture_default_str();
  train_cmd->add_option("--patience", t.plateau_patience)->capture_default_str();
  train_cmd->add_option("--plateau-threshold", t.plateau_threshold)->capture_default_str();
  train_cmd->add_option("--grad-clip", t.grad_clip, "0 disables")->capture_default_str();
  train_cmd->add_option("--seed", t.rng_seed)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", t.checkpoint_every)->capture_default_str();
  train_cmd->add_option("--encoder-hidden", t.model.encoder_hidden)->capture_default_str();
  train_cmd->add_option("--decoder-hidden", t.model.decoder_hidden)->capture_default_str();
  train_cmd->add_option("--decoder-input", t.model.decoder_input)->capture_default_str();
  train_cmd->add_option("--latent-dim", t.model.latent_dim)->capture_default_str();

  auto* score = app.add_subcommand("score", "Score frames of a test archive with a checkpoint");
  score->add_option("--checkpoint", c.checkpoint)->required();
  score->add_option("--archive", c.archive)->required();
  score->add_option("--labels", c.labels, "Frame-label CSV");
  score->add_option("--out", c.out, "Score CSV")->required();
  score->add_option("--report", c.report, "Metric JSON (default: <out>.json)");
  score->add_option("--error-mode", c.error_mode, "summed or flattened")->capture_default_str();
  score->add_option("--latent-mode", c.latent_mode, "mean or stochastic")->capture_default_str();
  score->add_option("--k-samples", c.k_samples)->capture_default_str();
  score->add_option("--seed", c.seed)->capture_default_str();
  score->add_option("--batch", c.inference_batch)->capture_default_str();
  score->add_flag("--per-video-minmax", c.per_video_minmax);

  auto* eval = app.add_subcommand("eval", "Frame-level ROC AUC of a score CSV");
  eval->add_option("--scores", c.scores)->required();
  eval->add_option("--labels", c.labels, "Override labels from a frame-label CSV");
  eval->add_option("--report", c.report, "Metric JSON");
  eval->add_option("--error-mode", c.error_mode, "Recorded in the report")->capture_default_str();
  eval->add_flag("--hr-mask", c.hr_mask, "Also report AUC with hr_mask frames excluded");

  auto* plot = app.add_subcommand("plot", "Per-video score curves as SVG");
  plot->add_option("--scores", c.scores)->required();
  plot->add_option("--labels", c.labels);
  plot->add_option("--out", c.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (*prepare) cmd_prepare(c, err);
    if (*synth) cmd_synth(c, err);
    if (*train_cmd) cmd_train(c, train_cmd->config_to_str(true, false), err);
    if (*score) cmd_score(c, err);
    if (*eval) cmd_eval(c, out);
    if (*plot) cmd_plot(c, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return static_cast<int>(ExitCode::ok);
}

}  // namespace bipoco::cli
