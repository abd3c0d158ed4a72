#pragma once

// Optimization loop, batched inference and checkpoint evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bipoco/anomaly.hpp"
#include "bipoco/checkpoint.hpp"
#include "bipoco/data.hpp"
#include "bipoco/losses.hpp"
#include "bipoco/nn.hpp"
#include "bipoco/predictor.hpp"

namespace bipoco {

struct TrainConfig {
  int tau = 3;
  int delta = 3;
  int batch_size = 64;
  int epochs = 250;
  /// Stop after this many optimizer steps; 0 means run all epochs.
  std::int64_t max_steps = 0;
  double base_lr = 1e-3;
  double lr_decay_factor = 0.2;
  int plateau_patience = 10;
  /// Relative improvement an epoch must make to reset the plateau counter.
  double plateau_threshold = 1e-4;
  double grad_clip = 10.0;  // <= 0 disables clipping
  losses::LossWeights weights;
  losses::LossMask mask = losses::LossMask::all();
  losses::EndpointParents endpoint_parents = losses::EndpointParents::ground_truth;
  std::uint64_t rng_seed = 0;
  std::int64_t checkpoint_every = 0;
  PredictorConfig model;

  void validate() const {
    if (tau < 1 || delta < 1) throw ConfigError("tau and delta must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
      throw ConfigError("lr_decay_factor must lie in (0, 1)");
    }
    if (plateau_patience < 0) throw ConfigError("plateau_patience must be >= 0");
    if (model.tau != tau || model.delta != delta) throw ConfigError("model tau/delta differ from training tau/delta");
    weights.validate();
    model.validate();
  }
};

/// Epoch budgets used for the benchmark runs: 250 for timescales 3 and 5 and
/// 500 for 13 and 25 on Avenue; 500 throughout on ShanghaiTech.
inline int benchmark_epochs(int timescale, bool shanghaitech) {
  if (shanghaitech) return 500;
  return timescale <= 5 ? 250 : 500;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"tau", c.tau},
          {"delta", c.delta},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"base_lr", c.base_lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"plateau_patience", c.plateau_patience},
          {"plateau_threshold", c.plateau_threshold},
          {"grad_clip", c.grad_clip},
          {"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"gamma", c.weights.gamma},
          {"losses", c.mask.str()},
          {"endpoint_parents",
           c.endpoint_parents == losses::EndpointParents::ground_truth ? "ground_truth" : "predicted"},
          {"rng_seed", c.rng_seed},
          {"checkpoint_every", c.checkpoint_every}};
}

// ---- batches and loss assembly -------------------------------------------------

struct Batch {
  std::vector<ad::Matrix> observation;  // τ x (B x 36)
  std::vector<ad::Matrix> target;       // δ x (B x 36)
  ad::Matrix target_joints_px;          // (δ·B) x 36, step-major
  ad::Matrix frame_dims;                // (δ·B) x 2
  std::vector<std::size_t> indices;

  Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }
};

inline Batch make_batch(std::span<const WindowedSample> windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  const auto B = static_cast<Eigen::Index>(indices.size());
  const int tau = windows[indices[0]].tau();
  const int delta = windows[indices[0]].delta();
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.observation.assign(static_cast<std::size_t>(tau), ad::Matrix(B, kFeatureDim));
  b.target.assign(static_cast<std::size_t>(delta), ad::Matrix(B, kFeatureDim));
  b.target_joints_px.resize(delta * B, kFeatureDim);
  b.frame_dims.resize(delta * B, 2);
  for (Eigen::Index r = 0; r < B; ++r) {
    const auto& w = windows[indices[static_cast<std::size_t>(r)]];
    if (w.tau() != tau || w.delta() != delta) throw ConfigError("windows in a batch must share tau and delta");
    for (int k = 0; k < tau; ++k) b.observation[static_cast<std::size_t>(k)].row(r) = w.observation[static_cast<std::size_t>(k)].flatten().transpose();
    for (int k = 0; k < delta; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      b.target[ku].row(r) = w.target[ku].flatten().transpose();
      const JointSet& js = w.target_joints[ku];
      const Eigen::Index row = k * B + r;
      for (int n = 1; n <= kNumJoints; ++n) {
        b.target_joints_px(row, 2 * (n - 1)) = js.joint(n).x();
        b.target_joints_px(row, 2 * (n - 1) + 1) = js.joint(n).y();
      }
      b.frame_dims(row, 0) = w.meta.frame_width;
      b.frame_dims(row, 1) = w.meta.frame_height;
    }
  }
  return b;
}

struct LossTerms {
  losses::TrajectoryTerms trajectory;
  ad::Var bone;
  ad::Var endpoint;
  ad::Var joint;
  ad::Var total;

  losses::LossReport report() const {
    losses::LossReport r;
    r.trajectory = trajectory.total.scalar();
    r.bone = bone.scalar();
    r.endpoint = endpoint.scalar();
    r.joint = joint.scalar();
    r.kld = trajectory.kld.scalar();
    r.total = total.scalar();
    return r;
  }
};

/// Composite loss of one forward_train pass. Pose constraints apply at every
/// predicted step and are averaged over steps and batch.
inline LossTerms assemble_losses(ad::Tape& tape, const Predictor::TapeOutput& out,
                                 const std::vector<ad::Var>& target, const Batch& batch,
                                 const TrainConfig& cfg) {
  LossTerms t;
  t.trajectory = losses::trajectory_loss(out.bones, out.goal, target, out.prior.mean, out.prior.logvar,
                                         out.recognition.mean, out.recognition.logvar);
  ad::Var pred_bones = ad::concat_rows(out.bones);
  ad::Var gt_bones = ad::concat_rows(target);
  ad::Var pred_joints = ad::matmul_const(pred_bones, bones_to_joints_matrix());
  ad::Var gt_joints = tape.constant(gt_bones.value() * bones_to_joints_matrix());
  t.bone = losses::bone_loss(pred_joints, gt_joints);
  t.endpoint = losses::endpoint_loss(pred_joints, gt_joints, cfg.endpoint_parents);
  t.joint = losses::joint_loss(pred_bones, batch.target_joints_px, batch.frame_dims);
  t.total = losses::combine(t.trajectory.total, t.bone, t.endpoint, t.joint, cfg.weights, cfg.mask);
  return t;
}

// ---- training ------------------------------------------------------------------

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  losses::LossReport loss;
  double lr = 0.0;
};

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step},         {"epoch", s.epoch},         {"L_T", s.loss.trajectory},
          {"L_B", s.loss.bone},     {"L_E", s.loss.endpoint},   {"L_J", s.loss.joint},
          {"KLD", s.loss.kld},      {"total", s.loss.total},    {"lr", s.lr}};
}

struct TrainOptions {
  /// JSON-lines metrics sink, one line per optimizer step.
  std::ostream* metrics = nullptr;
  /// Directory for periodic checkpoints (checkpoint_every > 0).
  std::string checkpoint_dir;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  Predictor model;
  std::int64_t steps = 0;
  int epochs_run = 0;
  double final_lr = 0.0;
  StepLog last;
  std::vector<double> epoch_loss;
};

/// Reduce-on-plateau learning-rate schedule keyed on epoch-mean loss.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int patience, double threshold)
      : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold) {}

  /// Feeds one epoch's mean loss; returns true if the rate was reduced.
  bool update(double epoch_loss) {
    if (epoch_loss < best_ * (1.0 - threshold_)) {
      best_ = epoch_loss;
      bad_ = 0;
      return false;
    }
    if (++bad_ > patience_) {
      lr_ *= factor_;
      bad_ = 0;
      return true;
    }
    return false;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

inline TrainResult train(const TrainConfig& cfg, std::span<const WindowedSample> windows,
                         const TrainOptions& opt = {}) {
  cfg.validate();
  if (windows.empty()) throw ConfigError("training set is empty");
  for (const auto& w : windows) {
    if (w.tau() != cfg.tau || w.delta() != cfg.delta) {
      throw ConfigError("training windows must all have tau=" + std::to_string(cfg.tau) +
                        " and delta=" + std::to_string(cfg.delta));
    }
  }
  std::mt19937_64 rng(cfg.rng_seed);
  TrainResult result{Predictor(cfg.model, rng()), 0, 0, 0.0, {}, {}};
  Predictor& model = result.model;
  nn::Adam adam;
  PlateauSchedule schedule(cfg.base_lr, cfg.lr_decay_factor, cfg.plateau_patience, cfg.plateau_threshold);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const nlohmann::json train_json = to_json(cfg);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      const Batch batch = make_batch(windows, idx);
      ad::Tape tape;
      nn::Binding bind(tape, model.parameters());
      std::vector<ad::Var> obs, tgt;
      for (const auto& m : batch.observation) obs.push_back(tape.constant(m));
      for (const auto& m : batch.target) tgt.push_back(tape.constant(m));
      const auto out = model.forward_train(bind, obs, tgt, rng);
      const LossTerms terms = assemble_losses(tape, out, tgt, batch, cfg);
      StepLog log;
      log.step = result.steps + 1;
      log.epoch = epoch;
      log.lr = schedule.lr();
      try {
        log.loss = losses::total_loss(terms.report(), cfg.weights, cfg.mask);
        if (!std::isfinite(log.loss.total)) throw NonFiniteLossError("non-finite total loss");
      } catch (const NonFiniteLossError& e) {
        std::string ids;
        for (std::size_t i : idx) {
          const auto& m = windows[i].meta;
          if (!ids.empty()) ids += ", ";
          ids += m.video_id + "/" + m.track_id + "@" + std::to_string(m.start_frame);
        }
        throw NonFiniteLossError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(log.step) + " (batch: " + ids + ")");
      }
      tape.backward(terms.total);
      model.parameters().zero_grad();
      bind.collect_grads();
      if (cfg.grad_clip > 0.0) nn::clip_grad_norm(model.parameters(), cfg.grad_clip);
      adam.step(model.parameters(), schedule.lr());
      ++result.steps;
      epoch_sum += log.loss.total;
      ++epoch_batches;
      result.last = log;
      if (opt.metrics) *opt.metrics << to_json(log).dump() << '\n';
      if (opt.on_step) opt.on_step(log);
      if (cfg.checkpoint_every > 0 && !opt.checkpoint_dir.empty() && result.steps % cfg.checkpoint_every == 0) {
        save_checkpoint(opt.checkpoint_dir + "/step_" + std::to_string(result.steps) + ".ckpt", model,
                        result.steps, cfg.rng_seed, train_json);
      }
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    result.epochs_run = epoch + 1;
    schedule.update(result.epoch_loss.back());
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
  }
  result.final_lr = schedule.lr();
  return result;
}

// ---- inference and evaluation -----------------------------------------------------

struct InferenceOptions {
  int batch_size = 256;
  LatentMode latent_mode = LatentMode::mean;
  /// Stochastic draws per window; the one closest to ground truth is kept.
  int k_samples = 1;
  std::uint64_t seed = 0;
};

/// Predicted pixel joints for every window (δ JointSets each).
inline std::vector<std::vector<JointSet>> predict_windows(const Predictor& model,
                                                          std::span<const WindowedSample> windows,
                                                          const InferenceOptions& opt = {}) {
  const auto& mc = model.config();
  for (const auto& w : windows) {
    if (w.tau() != mc.tau || w.delta() != mc.delta) {
      throw ConfigError("window tau/delta (" + std::to_string(w.tau()) + "/" + std::to_string(w.delta()) +
                        ") differ from the model's (" + std::to_string(mc.tau) + "/" +
                        std::to_string(mc.delta) + ")");
    }
  }
  if (opt.k_samples < 1) throw ConfigError("k_samples must be >= 1");
  const int draws = opt.k_samples;
  const LatentMode mode = draws > 1 ? LatentMode::stochastic : opt.latent_mode;
  std::mt19937_64 rng(opt.seed);
  std::vector<std::vector<JointSet>> out(windows.size());
  std::vector<double> best(windows.size(), std::numeric_limits<double>::infinity());
  const auto bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  for (std::size_t start = 0; start < windows.size(); start += bs) {
    const std::size_t n = std::min(bs, windows.size() - start);
    std::vector<ad::Matrix> obs(static_cast<std::size_t>(mc.tau), ad::Matrix(static_cast<Eigen::Index>(n), kFeatureDim));
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < mc.tau; ++k) {
        obs[static_cast<std::size_t>(k)].row(static_cast<Eigen::Index>(i)) =
            windows[start + i].observation[static_cast<std::size_t>(k)].flatten().transpose();
      }
    }
    for (int d = 0; d < draws; ++d) {
      const auto steps = model.infer(obs, mode, rng);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& w = windows[start + i];
        std::vector<JointSet> joints;
        for (const auto& s : steps) {
          JointSet js = bones_to_pose(BoneSet::unflatten(s.row(static_cast<Eigen::Index>(i)).transpose()),
                                      w.meta.frame_width, w.meta.frame_height);
          joints.push_back(js);
        }
        const double err = draws > 1 ? joint_error_metric(joints, w.target_joints) : 0.0;
        if (d == 0 || err < best[start + i]) {
          best[start + i] = err;
          out[start + i] = std::move(joints);
        }
      }
    }
  }
  return out;
}

/// Person-level errors per predicted step of each window.
inline std::vector<WindowErrors> window_errors(std::span<const WindowedSample> windows,
                                               std::span<const std::vector<JointSet>> predictions) {
  if (windows.size() != predictions.size()) throw ShapeError("window_errors: count mismatch");
  std::vector<WindowErrors> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    WindowErrors e{w.meta.video_id, w.meta.track_id, {}, {}};
    for (int k = 0; k < w.delta(); ++k) {
      const auto ku = static_cast<std::size_t>(k);
      e.frames.push_back(w.target_frame(k));
      const auto& conf = w.confidences[static_cast<std::size_t>(w.tau() + k)];
      e.step_errors.push_back(person_error(w.target_joints[ku], predictions[i][ku], conf));
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Mean joint-error metric over windows touching no anomalous frame vs. windows that do.
inline JointErrorSummary split_joint_error(std::span<const WindowedSample> windows,
                                           std::span<const std::vector<JointSet>> predictions,
                                           std::span<const FrameLabelSet> labels) {
  std::map<std::string, const FrameLabelSet*> index;
  for (const auto& l : labels) index[l.video_id] = &l;
  double sum_n = 0, sum_a = 0;
  JointErrorSummary s;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    bool anomalous = false;
    const auto it = index.find(w.meta.video_id);
    for (int k = 0; k < w.delta() && it != index.end(); ++k) {
      const int f = w.target_frame(k);
      if (it->second->contains(f) && it->second->label(f) != 0) anomalous = true;
    }
    const double e = joint_error_metric(predictions[i], w.target_joints);
    if (anomalous) {
      sum_a += e;
      ++s.anomalous_windows;
    } else {
      sum_n += e;
      ++s.normal_windows;
    }
  }
  if (s.normal_windows) s.normal = sum_n / static_cast<double>(s.normal_windows);
  if (s.anomalous_windows) s.anomalous = sum_a / static_cast<double>(s.anomalous_windows);
  return s;
}

struct Evaluation {
  MetricReport report;
  std::vector<ScoreRow> scores;
};

/// Runs inference over all test windows, scores frames and computes AUC.
inline Evaluation evaluate_checkpoint(const Predictor& model, std::span<const WindowedSample> test_windows,
                                      std::span<const FrameLabelSet> labels, ErrorMode mode,
                                      const InferenceOptions& inference = {}, bool per_video_minmax = false) {
  const auto preds = predict_windows(model, test_windows, inference);
  const auto errors = window_errors(test_windows, preds);
  Evaluation ev;
  ev.scores = frame_scores(errors, labels, {mode, per_video_minmax});
  ev.report.error_mode = to_string(mode);
  fill_auc(ev.report, ev.scores);
  ev.report.joint_error = split_joint_error(test_windows, preds, labels);
  TimescaleMetrics t;
  t.timescale = model.config().tau;
  t.auc = ev.report.auc;
  t.auc_hr = ev.report.auc_hr;
  t.joint_error = ev.report.joint_error;
  ev.report.per_timescale.push_back(t);
  return ev;
}

}  // namespace bipoco
