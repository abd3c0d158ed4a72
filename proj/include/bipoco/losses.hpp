#pragma once

// Training objectives.
//
// Pose-level losses take row-stacked batches: every row is one pose
// (sample x prediction step) as 36 normalized joint coordinates, laid out
// like BoneSet::flatten (joint n at columns 2(n-1), 2(n-1)+1). They sum over
// joints/tracks within a row and average over rows.

#include <array>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "bipoco/autodiff.hpp"
#include "bipoco/skeleton.hpp"

namespace bipoco::losses {

using ad::Matrix;
using ad::Var;

struct LossWeights {
  double alpha = 1.0;  // bone
  double beta = 1.0;   // endpoint
  double gamma = 1.0;  // joint

  void validate() const {
    for (double w : {alpha, beta, gamma}) {
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
    }
  }
};

/// Which pose constraints are active on top of the trajectory loss.
struct LossMask {
  bool bone = true;
  bool endpoint = true;
  bool joint = true;

  static LossMask none() { return {false, false, false}; }
  static LossMask all() { return {true, true, true}; }

  /// Accepts "all", "none", or any combination of the letters B, E, J
  /// (separators '-', ',', '+' allowed), e.g. "E", "B-J".
  static LossMask parse(const std::string& text) {
    std::string s;
    for (char c : text) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (s == "ALL") return all();
    if (s == "NONE" || s.empty()) return none();
    LossMask m = none();
    for (char c : s) {
      switch (c) {
        case 'B': m.bone = true; break;
        case 'E': m.endpoint = true; break;
        case 'J': m.joint = true; break;
        case '-': case ',': case '+': case ' ': break;
        default: throw ConfigError("unknown loss term '" + std::string(1, c) + "' in --losses");
      }
    }
    return m;
  }

  std::string str() const {
    if (bone && endpoint && joint) return "all";
    if (!bone && !endpoint && !joint) return "none";
    std::string out;
    auto append = [&out](const char* t) { out += out.empty() ? t : std::string("-") + t; };
    if (bone) append("B");
    if (endpoint) append("E");
    if (joint) append("J");
    return out;
  }
};

struct LossReport {
  double trajectory = 0.0;  // L_T, includes the KLD term
  double bone = 0.0;        // L_B
  double endpoint = 0.0;    // L_E
  double joint = 0.0;       // L_J
  double kld = 0.0;
  double total = 0.0;
};

/// Endpoint residual convention: the displayed form subtracts ground-truth
/// parents from predicted joints; the alternative uses predicted parents.
enum class EndpointParents { ground_truth, predicted };

namespace detail {

inline int col(int joint) { return 2 * (joint - 1); }

/// joints (row) * M = bones incl. the root bone B_18 = origin - J_18.
inline const Matrix& joints_to_bones_matrix() {
  static const Matrix m = [] {
    const auto& topo = coco_topology();
    Matrix out = Matrix::Zero(kFeatureDim, kFeatureDim);
    for (int n = 1; n <= kNumJoints; ++n) {
      for (int a = 0; a < 2; ++a) {
        out(col(n) + a, col(n) + a) -= 1.0;
        if (n != kRoot) out(col(topo.parent_of(n)) + a, col(n) + a) += 1.0;
      }
    }
    return out;
  }();
  return m;
}

/// Summed predicted joints along each track: (36 x 12).
inline const Matrix& track_joint_matrix() {
  static const Matrix m = [] {
    Matrix out = Matrix::Zero(kFeatureDim, 2 * kNumTracks);
    const auto& topo = coco_topology();
    for (int t = 0; t < kNumTracks; ++t) {
      for (int n : topo.endpoint_tracks[static_cast<std::size_t>(t)]) {
        for (int a = 0; a < 2; ++a) out(col(n) + a, 2 * t + a) += 1.0;
      }
    }
    return out;
  }();
  return m;
}

/// Summed parents along each track: (36 x 12).
inline const Matrix& track_parent_matrix() {
  static const Matrix m = [] {
    Matrix out = Matrix::Zero(kFeatureDim, 2 * kNumTracks);
    const auto& topo = coco_topology();
    for (int t = 0; t < kNumTracks; ++t) {
      for (int n : topo.endpoint_tracks[static_cast<std::size_t>(t)]) {
        const int p = topo.parent_of(n);
        for (int a = 0; a < 2; ++a) out(col(p) + a, 2 * t + a) += 1.0;
      }
    }
    return out;
  }();
  return m;
}

inline void check_pose_rows(const Var& a, const char* what) {
  if (a.cols() != kFeatureDim) {
    throw ShapeError(std::string(what) + ": expected 36 columns, got " + std::to_string(a.cols()));
  }
}

}  // namespace detail

/// Per-row KL(q || p) between diagonal Gaussians given by (mean, log-variance).
inline Var gaussian_kld(Var mu_q, Var logvar_q, Var mu_p, Var logvar_p) {
  // 0.5 * sum( lv_p - lv_q + (exp(lv_q) + (mu_q - mu_p)^2) / exp(lv_p) - 1 )
  Var inv_var_p = ad::exp(ad::affine(logvar_p, -1.0));
  Var num = ad::add(ad::exp(logvar_q), ad::square(ad::sub(mu_q, mu_p)));
  Var inner = ad::add(ad::sub(logvar_p, logvar_q), ad::mul(num, inv_var_p));
  return ad::affine(ad::row_sum(ad::affine(inner, 1.0, -1.0)), 0.5);
}

struct TrajectoryTerms {
  Var goal;      // mean over batch of ||B*_{t+δ} - Ĝ||_2
  Var sequence;  // mean over batch of sum_k ||B*_k - B̂_k||_2
  Var kld;       // mean over batch of KL(recognition || prior)
  Var total;
};

/// L_T for a batch. `pred` and `target` hold δ matrices of (batch x 36) bone features.
inline TrajectoryTerms trajectory_loss(const std::vector<Var>& pred, Var goal_pred,
                                       const std::vector<Var>& target, Var prior_mean,
                                       Var prior_logvar, Var recog_mean, Var recog_logvar) {
  if (pred.empty() || pred.size() != target.size()) {
    throw ShapeError("trajectory_loss: prediction and target lengths differ");
  }
  const double batch = static_cast<double>(goal_pred.rows());
  TrajectoryTerms out;
  out.goal = ad::affine(ad::sum(ad::row_norm(ad::sub(target.back(), goal_pred))), 1.0 / batch);
  std::vector<Var> diffs;
  diffs.reserve(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) diffs.push_back(ad::sub(target[k], pred[k]));
  out.sequence = ad::affine(ad::sum(ad::row_norm(ad::concat_rows(diffs))), 1.0 / batch);
  out.kld = ad::mean(gaussian_kld(recog_mean, recog_logvar, prior_mean, prior_logvar));
  out.total = ad::add(ad::add(out.goal, out.sequence), out.kld);
  return out;
}

/// L_B: sum over n=1..18 of |B̂_n - B_n|_1, with B_18 measured from the image origin.
inline Var bone_loss(Var pred_joints, Var gt_joints) {
  detail::check_pose_rows(pred_joints, "bone_loss");
  ad::detail::same_shape(pred_joints, gt_joints, "bone_loss");
  Var diff = ad::matmul_const(ad::sub(pred_joints, gt_joints), detail::joints_to_bones_matrix());
  return ad::mean(ad::row_sum(ad::abs(diff)));
}

/// L_E: for each of the six tracks, |sum_n (Ĵ_n - J_parent(n))|_1, summed over tracks.
inline Var endpoint_loss(Var pred_joints, Var gt_joints,
                         EndpointParents parents = EndpointParents::ground_truth) {
  detail::check_pose_rows(pred_joints, "endpoint_loss");
  ad::detail::same_shape(pred_joints, gt_joints, "endpoint_loss");
  Var pred_part = ad::matmul_const(pred_joints, detail::track_joint_matrix());
  Var parent_part = parents == EndpointParents::ground_truth
                        ? ad::matmul_const(gt_joints, detail::track_parent_matrix())
                        : ad::matmul_const(pred_joints, detail::track_parent_matrix());
  return ad::mean(ad::row_sum(ad::abs(ad::sub(pred_part, parent_part))));
}

/// Per-row pixel scale (w, h, w, h, ...) from (rows x 2) frame dimensions.
inline Matrix pixel_scale(const Matrix& frame_dims) {
  Matrix s(frame_dims.rows(), kFeatureDim);
  for (Eigen::Index r = 0; r < frame_dims.rows(); ++r) {
    check_frame_dims(frame_dims(r, 0), frame_dims(r, 1));
    for (int n = 0; n < kNumJoints; ++n) {
      s(r, 2 * n) = frame_dims(r, 0);
      s(r, 2 * n + 1) = frame_dims(r, 1);
    }
  }
  return s;
}

/// L_J: recover Ĵ in pixels from predicted bones, take |Ĵ_n - J_n|_1 over all
/// 18 joints, and re-normalize each axis residual by the frame size.
inline Var joint_loss(Var pred_bones, const Matrix& gt_joints_px, const Matrix& frame_dims) {
  detail::check_pose_rows(pred_bones, "joint_loss");
  if (gt_joints_px.rows() != pred_bones.rows() || gt_joints_px.cols() != kFeatureDim ||
      frame_dims.rows() != pred_bones.rows() || frame_dims.cols() != 2) {
    throw DimensionError("joint_loss: ground truth or frame dims do not match predictions");
  }
  const Matrix scale = pixel_scale(frame_dims);
  const Matrix inv_scale = scale.cwiseInverse();
  Var pred_px = ad::mul_const(ad::matmul_const(pred_bones, bones_to_joints_matrix()), scale);
  Var resid_px = ad::sub(pred_px, pred_px.tape()->constant(gt_joints_px));
  return ad::mean(ad::row_sum(ad::abs(ad::mul_const(resid_px, inv_scale))));
}

/// Weighted combination L = L_T + αL_B + βL_E + γL_J with disabled terms dropped.
inline Var combine(Var trajectory, Var bone, Var endpoint, Var joint, const LossWeights& w,
                   const LossMask& mask) {
  Var total = trajectory;
  if (mask.bone) total = ad::add(total, ad::affine(bone, w.alpha));
  if (mask.endpoint) total = ad::add(total, ad::affine(endpoint, w.beta));
  if (mask.joint) total = ad::add(total, ad::affine(joint, w.gamma));
  return total;
}

/// Scalar counterpart of combine(); `parts` carries L_T, L_B, L_E, L_J and KLD.
inline LossReport total_loss(LossReport parts, const LossWeights& w, const LossMask& mask = {}) {
  w.validate();
  const std::array<std::pair<const char*, double>, 5> named = {{{"L_T", parts.trajectory},
                                                                {"L_B", parts.bone},
                                                                {"L_E", parts.endpoint},
                                                                {"L_J", parts.joint},
                                                                {"KLD", parts.kld}}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw NonFiniteLossError(std::string("non-finite loss component ") + name);
  }
  parts.total = parts.trajectory + (mask.bone ? w.alpha * parts.bone : 0.0) +
                (mask.endpoint ? w.beta * parts.endpoint : 0.0) +
                (mask.joint ? w.gamma * parts.joint : 0.0);
  return parts;
}

}  // namespace bipoco::losses
