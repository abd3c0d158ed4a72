#include <gtest/gtest.h>

#include <random>

#include "bipoco/skeleton.hpp"

using namespace bipoco;

namespace {

std::array<Point, kNumKeypoints> random_keypoints(std::mt19937_64& rng, double w, double h) {
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
  std::array<Point, kNumKeypoints> kp;
  for (auto& p : kp) p = Point(ux(rng), uy(rng));
  return kp;
}

JointSet random_pose(std::mt19937_64& rng, double w = 640, double h = 360) {
  const auto kp = random_keypoints(rng, w, h);
  std::array<double, kNumKeypoints> conf{};
  conf.fill(1.0);
  return make_joint_set(kp, conf, w, h);
}

}  // namespace

TEST(Topology, ParentMapMatchesTree) {
  const std::map<int, int> expected = {{1, 18}, {6, 18},  {7, 18},  {12, 18}, {13, 18}, {8, 6},
                                       {10, 8}, {9, 7},   {11, 9},  {14, 12}, {16, 14}, {15, 13},
                                       {17, 15}, {2, 1},  {4, 2},   {3, 1},   {5, 3},   {18, 0}};
  const auto& topo = coco_topology();
  ASSERT_EQ(expected.size(), 18u);
  for (const auto& [n, p] : expected) EXPECT_EQ(topo.parent_of(n), p) << "joint " << n;
}

TEST(Topology, EndpointTracks) {
  const auto& topo = coco_topology();
  using A = std::array<int, 3>;
  EXPECT_EQ(topo.track(Track::LA), (A{6, 8, 10}));
  EXPECT_EQ(topo.track(Track::RA), (A{7, 9, 11}));
  EXPECT_EQ(topo.track(Track::LL), (A{12, 14, 16}));
  EXPECT_EQ(topo.track(Track::RL), (A{13, 15, 17}));
  EXPECT_EQ(topo.track(Track::LF), (A{1, 2, 4}));
  EXPECT_EQ(topo.track(Track::RF), (A{1, 3, 5}));
}

TEST(Topology, OrderIsParentFirst) {
  const auto& topo = coco_topology();
  std::array<int, kNumJoints + 1> pos{};
  for (int i = 0; i < kNumJoints; ++i) pos[static_cast<std::size_t>(topo.topological_order[static_cast<std::size_t>(i)])] = i;
  EXPECT_EQ(topo.topological_order[0], kRoot);
  for (int n = 1; n <= kNumKeypoints; ++n) {
    EXPECT_LT(pos[static_cast<std::size_t>(topo.parent_of(n))], pos[static_cast<std::size_t>(n)]);
  }
}

TEST(Topology, RejectsCycle) {
  auto parent = coco_topology().parent;
  parent[6] = 10;  // 6 -> 10 -> 8 -> 6
  EXPECT_THROW(validate_parent_map(parent), ConfigError);
}

TEST(Topology, RejectsBadLabelsAndRoot) {
  auto parent = coco_topology().parent;
  parent[4] = 19;
  EXPECT_THROW(validate_parent_map(parent), ConfigError);
  parent = coco_topology().parent;
  parent[18] = 6;
  EXPECT_THROW(validate_parent_map(parent), ConfigError);
  parent = coco_topology().parent;
  parent[3] = 3;
  EXPECT_THROW(validate_parent_map(parent), ConfigError);
  std::vector<int> short_map(10, 0);
  EXPECT_THROW(validate_parent_map(short_map), ConfigError);
}

TEST(MakeRoot, Examples) {
  std::array<Point, kNumKeypoints> kp;
  kp.fill(Point(99, 99));
  kp[5] = kp[6] = kp[11] = kp[12] = Point(4, 4);
  EXPECT_EQ(make_root(kp), Point(4, 4));

  kp[5] = Point(0, 0);
  kp[6] = Point(2, 0);
  kp[11] = Point(0, 2);
  kp[12] = Point(2, 2);
  EXPECT_EQ(make_root(kp), Point(1, 1));

  kp[5] = Point(10, 20);
  kp[6] = Point(30, 20);
  kp[11] = Point(12, 60);
  kp[12] = Point(28, 62);
  EXPECT_DOUBLE_EQ(make_root(kp).x(), 20.0);
  EXPECT_DOUBLE_EQ(make_root(kp).y(), 40.5);
}

TEST(MakeRoot, MissingContributorThrows) {
  PartialKeypoints kp;
  for (int n : {6, 7, 12}) kp[static_cast<std::size_t>(n - 1)] = Point(1, 1);
  EXPECT_THROW(make_root(kp), MissingJointError);
  kp[12] = Point(5, 5);
  EXPECT_EQ(make_root(kp), Point(2, 2));
}

TEST(PoseToBones, CoincidentPose) {
  JointSet js;
  js.frame_width = 640;
  js.frame_height = 360;
  for (auto& j : js.joints) j = Point(320, 180);
  const BoneSet b = pose_to_bones(js);
  EXPECT_EQ(b.root, Point(0.5, 0.5));
  for (const auto& bone : b.bones) EXPECT_EQ(bone, Point(0, 0));
}

TEST(PoseToBones, WristBoneByHand) {
  std::mt19937_64 rng(1);
  JointSet js = random_pose(rng);
  js.joint(10) = Point(100, 200);
  js.joint(8) = Point(110, 180);
  const BoneSet b = pose_to_bones(js);
  EXPECT_DOUBLE_EQ(b.bone(10).x(), 0.015625);
  EXPECT_DOUBLE_EQ(b.bone(10).y(), -20.0 / 360.0);
}

TEST(PoseToBones, ZeroFrameDimensionThrows) {
  std::mt19937_64 rng(2);
  JointSet js = random_pose(rng);
  js.frame_width = 0;
  EXPECT_THROW(pose_to_bones(js), DimensionError);
  EXPECT_THROW(bones_to_pose(BoneSet{}, 640, 0), DimensionError);
  EXPECT_THROW(bones_to_pose(BoneSet{}, -1, 10), DimensionError);
}

TEST(BonesToPose, ZeroBonesCollapseOnRoot) {
  BoneSet b;
  b.root = Point(0.5, 0.5);
  const JointSet js = bones_to_pose(b, 100, 100);
  for (int n = 1; n <= kNumJoints; ++n) EXPECT_EQ(js.joint(n), Point(50, 50));
}

TEST(BonesToPose, RoundTripRandomPoses) {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const JointSet p = random_pose(rng);
    const JointSet q = bones_to_pose(pose_to_bones(p), p.frame_width, p.frame_height);
    for (int n = 1; n <= kNumJoints; ++n) worst = std::max(worst, (p.joint(n) - q.joint(n)).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(BonesToPose, BonesRoundTripOnArbitraryBoneSets) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int i = 0; i < 200; ++i) {
    Eigen::Matrix<double, kFeatureDim, 1> v;
    for (int k = 0; k < kFeatureDim; ++k) v(k) = u(rng);
    const BoneSet b = BoneSet::unflatten(v);
    const BoneSet c = pose_to_bones(bones_to_pose(b, 640, 360));
    EXPECT_LE((c.flatten() - v).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PoseToBones, TranslationMovesOnlyRoot) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    JointSet p = random_pose(rng);
    const BoneSet a = pose_to_bones(p);
    const Point t(17.0, -23.0);
    for (auto& j : p.joints) j += t;
    const BoneSet b = pose_to_bones(p);
    for (int n = 1; n <= kNumKeypoints; ++n) EXPECT_LE((a.bone(n) - b.bone(n)).norm(), 1e-12);
    EXPECT_NEAR(b.root.x() - a.root.x(), 17.0 / 640.0, 1e-12);
    EXPECT_NEAR(b.root.y() - a.root.y(), -23.0 / 360.0, 1e-12);
  }
}

TEST(BoneSet, FlattenLayout) {
  BoneSet b;
  b.root = Point(0.7, 0.8);
  for (int n = 1; n <= kNumKeypoints; ++n) b.bone(n) = Point(n, -n);
  const auto v = b.flatten();
  ASSERT_EQ(v.size(), 36);
  EXPECT_EQ(v(0), 1);
  EXPECT_EQ(v(1), -1);
  EXPECT_EQ(v(32), 17);
  EXPECT_EQ(v(34), 0.7);
  EXPECT_EQ(v(35), 0.8);
  Eigen::VectorXd wrong(35);
  EXPECT_THROW(BoneSet::unflatten(wrong), ShapeError);
}

TEST(BonesToJointsMatrix, MatchesScalarRecovery) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const JointSet p = random_pose(rng);
    const auto feat = pose_to_bones(p).flatten();
    const Eigen::RowVectorXd joints = feat.transpose() * bones_to_joints_matrix();
    EXPECT_LE((joints.transpose() - normalized_joints(p)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(JointSet, RootConfidenceIsTorsoMean) {
  JointSet js;
  for (int n = 1; n <= kNumKeypoints; ++n) js.confidences[static_cast<std::size_t>(n - 1)] = 0.1;
  js.confidences[5] = 0.2;
  js.confidences[6] = 0.4;
  js.confidences[11] = 0.6;
  js.confidences[12] = 0.8;
  EXPECT_DOUBLE_EQ(js.root_confidence(), 0.5);
}
