#pragma once

// Kinematic-tree skeleton model for 17 COCO keypoints plus a synthetic root.
//
// Joints use 1-based labels everywhere in the public API:
//   1 nose, 2/3 left/right eye, 4/5 left/right ear, 6/7 shoulders,
//   8/9 elbows, 10/11 wrists, 12/13 hips, 14/15 knees, 16/17 ankles,
//   18 root (mean of both shoulders and both hips).
// Flattened 36-D features put joint/bone n at slots 2(n-1), 2(n-1)+1, so the
// root occupies the last two slots.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bipoco/errors.hpp"

namespace bipoco {

using Point = Eigen::Vector2d;

inline constexpr int kNumKeypoints = 17;
inline constexpr int kNumJoints = 18;
inline constexpr int kRoot = 18;
inline constexpr int kFeatureDim = 2 * kNumJoints;
/// Parent label of the root: the image origin.
inline constexpr int kOrigin = 0;

enum class Track : int { LA = 0, RA, LL, RL, LF, RF };
inline constexpr int kNumTracks = 6;

/// Parent map and endpoint tracks of the kinematic tree.
struct SkeletonTopology {
  /// parent[n] for n in 1..18; parent[0] unused.
  std::array<int, kNumJoints + 1> parent{};
  /// Joint labels of each endpoint track, ordered from the torso outwards.
  std::array<std::array<int, 3>, kNumTracks> endpoint_tracks{};
  /// Labels ordered so that every parent precedes its children.
  std::array<int, kNumJoints> topological_order{};

  int parent_of(int n) const { return parent.at(static_cast<std::size_t>(n)); }
  const std::array<int, 3>& track(Track t) const {
    return endpoint_tracks[static_cast<std::size_t>(t)];
  }
};

/// Checks that `parent` (index 1..18, value 0 for the origin) forms a tree
/// rooted at joint 18 and returns a parent-first ordering.
/// Throws ConfigError on cycles, bad labels or unreachable joints.
inline std::array<int, kNumJoints> validate_parent_map(std::span<const int> parent) {
  if (parent.size() != kNumJoints + 1) {
    throw ConfigError("parent map must have 19 entries (index 0 unused)");
  }
  if (parent[kRoot] != kOrigin) throw ConfigError("parent of the root must be the origin");
  for (int n = 1; n <= kNumJoints; ++n) {
    const int p = parent[static_cast<std::size_t>(n)];
    if (n != kRoot && (p < 1 || p > kNumJoints || p == n)) {
      throw ConfigError("joint " + std::to_string(n) + " has invalid parent " + std::to_string(p));
    }
  }
  // depth via walk-up; a walk longer than the joint count means a cycle.
  std::array<int, kNumJoints + 1> depth{};
  for (int n = 1; n <= kNumJoints; ++n) {
    int steps = 0;
    for (int cur = n; cur != kRoot; cur = parent[static_cast<std::size_t>(cur)]) {
      if (++steps > kNumJoints) {
        throw ConfigError("joint " + std::to_string(n) + " does not reach the root (cycle)");
      }
    }
    depth[static_cast<std::size_t>(n)] = steps;
  }
  std::array<int, kNumJoints> order{};
  int k = 0;
  for (int d = 0; d < kNumJoints; ++d) {
    for (int n = 1; n <= kNumJoints; ++n) {
      if (depth[static_cast<std::size_t>(n)] == d) order[static_cast<std::size_t>(k++)] = n;
    }
  }
  return order;
}

/// The fixed 17+root COCO kinematic tree.
inline const SkeletonTopology& coco_topology() {
  static const SkeletonTopology topo = [] {
    SkeletonTopology t;
    t.parent = {kOrigin, 18, 1, 1, 2, 3, 18, 18, 6, 7, 8, 9, 18, 18, 12, 13, 14, 15, kOrigin};
    t.endpoint_tracks = {{{6, 8, 10}, {7, 9, 11}, {12, 14, 16}, {13, 15, 17}, {1, 2, 4}, {1, 3, 5}}};
    t.topological_order = validate_parent_map(t.parent);
    return t;
  }();
  return topo;
}

/// One pedestrian's pose at one frame, in pixels.
struct JointSet {
  std::array<Point, kNumJoints> joints{};
  /// Detector confidences for joints 1..17.
  std::array<double, kNumKeypoints> confidences{};
  double frame_width = 0.0;
  double frame_height = 0.0;

  Point& joint(int n) { return joints.at(static_cast<std::size_t>(n - 1)); }
  const Point& joint(int n) const { return joints.at(static_cast<std::size_t>(n - 1)); }
  double confidence(int n) const { return confidences.at(static_cast<std::size_t>(n - 1)); }

  /// Weight assigned to the root: mean confidence of shoulders and hips.
  double root_confidence() const {
    return (confidence(6) + confidence(7) + confidence(12) + confidence(13)) / 4.0;
  }
};

/// Normalized root position and 17 normalized bone vectors.
struct BoneSet {
  Point root = Point::Zero();
  std::array<Point, kNumKeypoints> bones{};

  BoneSet() { bones.fill(Point::Zero()); }

  Point& bone(int n) { return bones.at(static_cast<std::size_t>(n - 1)); }
  const Point& bone(int n) const { return bones.at(static_cast<std::size_t>(n - 1)); }

  Eigen::Matrix<double, kFeatureDim, 1> flatten() const {
    Eigen::Matrix<double, kFeatureDim, 1> v;
    for (int n = 1; n <= kNumKeypoints; ++n) v.segment<2>(2 * (n - 1)) = bone(n);
    v.segment<2>(2 * (kRoot - 1)) = root;
    return v;
  }

  template <typename Derived>
  static BoneSet unflatten(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() != kFeatureDim) throw ShapeError("bone feature vector must have 36 entries");
    BoneSet b;
    for (int n = 1; n <= kNumKeypoints; ++n) {
      b.bone(n) = Point(v(2 * (n - 1)), v(2 * (n - 1) + 1));
    }
    b.root = Point(v(2 * (kRoot - 1)), v(2 * (kRoot - 1) + 1));
    return b;
  }
};

/// Optional-joint input for root synthesis; entries 6, 7, 12 and 13 are required.
using PartialKeypoints = std::array<std::optional<Point>, kNumKeypoints>;

inline Point make_root(const PartialKeypoints& keypoints) {
  Point sum = Point::Zero();
  for (int n : {6, 7, 12, 13}) {
    const auto& p = keypoints[static_cast<std::size_t>(n - 1)];
    if (!p) throw MissingJointError("root needs joint " + std::to_string(n));
    sum += *p;
  }
  return sum / 4.0;
}

inline Point make_root(std::span<const Point, kNumKeypoints> keypoints) {
  return (keypoints[5] + keypoints[6] + keypoints[11] + keypoints[12]) / 4.0;
}

/// Builds a JointSet from 17 detector keypoints, synthesizing the root.
inline JointSet make_joint_set(std::span<const Point, kNumKeypoints> keypoints,
                               std::span<const double, kNumKeypoints> confidences, double width,
                               double height) {
  JointSet js;
  for (int n = 1; n <= kNumKeypoints; ++n) js.joint(n) = keypoints[static_cast<std::size_t>(n - 1)];
  js.joint(kRoot) = make_root(keypoints);
  std::copy(confidences.begin(), confidences.end(), js.confidences.begin());
  js.frame_width = width;
  js.frame_height = height;
  return js;
}

inline void check_frame_dims(double width, double height) {
  if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(width) || !std::isfinite(height)) {
    throw DimensionError("frame dimensions must be positive");
  }
}

inline BoneSet pose_to_bones(const JointSet& pose) {
  check_frame_dims(pose.frame_width, pose.frame_height);
  const auto& topo = coco_topology();
  const Point scale(pose.frame_width, pose.frame_height);
  BoneSet out;
  out.root = pose.joint(kRoot).cwiseQuotient(scale);
  for (int n = 1; n <= kNumKeypoints; ++n) {
    out.bone(n) = (pose.joint(topo.parent_of(n)) - pose.joint(n)).cwiseQuotient(scale);
  }
  return out;
}

/// Exact inverse of pose_to_bones. Confidences are left at zero.
inline JointSet bones_to_pose(const BoneSet& bones, double width, double height) {
  check_frame_dims(width, height);
  const auto& topo = coco_topology();
  const Point scale(width, height);
  JointSet js;
  js.frame_width = width;
  js.frame_height = height;
  for (int n : topo.topological_order) {
    if (n == kRoot) {
      js.joint(n) = bones.root.cwiseProduct(scale);
    } else {
      js.joint(n) = js.joint(topo.parent_of(n)) - bones.bone(n).cwiseProduct(scale);
    }
  }
  return js;
}

/// Matrix M such that (normalized joints, row) = (bone features, row) * M.
/// bones_to_pose is linear in normalized coordinates, so batched recovery is one product.
inline const Eigen::MatrixXd& bones_to_joints_matrix() {
  static const Eigen::MatrixXd m = [] {
    Eigen::MatrixXd out(kFeatureDim, kFeatureDim);
    for (int i = 0; i < kFeatureDim; ++i) {
      Eigen::Matrix<double, kFeatureDim, 1> e = Eigen::Matrix<double, kFeatureDim, 1>::Zero();
      e(i) = 1.0;
      const JointSet js = bones_to_pose(BoneSet::unflatten(e), 1.0, 1.0);
      for (int n = 1; n <= kNumJoints; ++n) {
        out(i, 2 * (n - 1)) = js.joint(n).x();
        out(i, 2 * (n - 1) + 1) = js.joint(n).y();
      }
    }
    return out;
  }();
  return m;
}

/// Flattens the 18 joints of a pose into normalized coordinates (x/w, y/h).
inline Eigen::Matrix<double, kFeatureDim, 1> normalized_joints(const JointSet& pose) {
  check_frame_dims(pose.frame_width, pose.frame_height);
  Eigen::Matrix<double, kFeatureDim, 1> v;
  for (int n = 1; n <= kNumJoints; ++n) {
    v(2 * (n - 1)) = pose.joint(n).x() / pose.frame_width;
    v(2 * (n - 1) + 1) = pose.joint(n).y() / pose.frame_height;
  }
  return v;
}

}  // namespace bipoco
