#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "bipoco/anomaly.hpp"

using namespace bipoco;

namespace {

JointSet flat_pose(double x, double y, double conf = 1.0) {
  JointSet p;
  p.frame_width = 640;
  p.frame_height = 360;
  for (auto& j : p.joints) j = Point(x, y);
  p.confidences.fill(conf);
  return p;
}

WindowErrors window(const std::string& track, std::vector<int> frames, std::vector<double> errors,
                    const std::string& video = "v") {
  return {video, track, std::move(frames), std::move(errors)};
}

FrameLabelSet labels(const std::string& video, int first, std::vector<std::uint8_t> l) {
  FrameLabelSet s;
  s.video_id = video;
  s.first_frame = first;
  s.labels = std::move(l);
  return s;
}

// Pairwise Mann-Whitney count, ties 1/2.
double brute_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return num / den;
}

}  // namespace

TEST(PersonError, WeightedSquaredPixelError) {
  JointSet gt = flat_pose(10, 10, 0.5);
  JointSet pred = gt;
  pred.joint(4) += Point(3, 4);
  EXPECT_DOUBLE_EQ(person_error(gt, pred), 12.5);
  pred.joint(kRoot) += Point(100, 100);
  EXPECT_DOUBLE_EQ(person_error(gt, pred), 12.5);

  std::array<double, kNumKeypoints> zeros{};
  EXPECT_DOUBLE_EQ(person_error(gt, pred, zeros), 0.0);
  std::array<double, kNumKeypoints> bad{};
  bad[3] = -1.0;
  EXPECT_THROW(person_error(gt, pred, bad), WeightError);
  bad[3] = std::nan("");
  EXPECT_THROW(person_error(gt, pred, bad), WeightError);
}

TEST(TrackErrors, SummedAveragesWindowTotals) {
  // Windows predicting frames {3,4} (total 6) and {4,5} (total 10).
  const std::vector<WindowErrors> ws = {window("a", {3, 4}, {2, 4}), window("a", {4, 5}, {4, 6})};
  const auto s = summed_error(ws);
  EXPECT_DOUBLE_EQ(s.at(3), 6.0);
  EXPECT_DOUBLE_EQ(s.at(4), 8.0);
  EXPECT_DOUBLE_EQ(s.at(5), 10.0);
  const auto f = flattened_error(ws);
  EXPECT_DOUBLE_EQ(f.at(3), 2.0);
  EXPECT_DOUBLE_EQ(f.at(4), 4.0);
  EXPECT_DOUBLE_EQ(f.at(5), 6.0);
  EXPECT_EQ(s.size(), 3u);
}

TEST(TrackErrors, FlattenedAveragesStepErrors) {
  const std::vector<WindowErrors> ws = {window("a", {7}, {2}), window("a", {7}, {4})};
  EXPECT_DOUBLE_EQ(flattened_error(ws).at(7), 3.0);
}

TEST(TrackErrors, CoverageMatchesSlidingWindows) {
  // Stride-1 windows with δ = 3 over frames 3..12: interior frames are covered 3 times.
  std::vector<WindowErrors> ws;
  for (int s = 3; s + 3 <= 13; ++s) ws.push_back(window("a", {s, s + 1, s + 2}, {1, 1, 1}));
  std::map<int, int> cover;
  for (const auto& w : ws) {
    for (int f : w.frames) ++cover[f];
  }
  EXPECT_EQ(cover.at(3), 1);
  EXPECT_EQ(cover.at(4), 2);
  EXPECT_EQ(cover.at(7), 3);
  EXPECT_EQ(cover.at(12), 1);
  // Constant errors make both modes constant regardless of coverage.
  for (const auto& [f, v] : summed_error(ws)) EXPECT_DOUBLE_EQ(v, 3.0);
  for (const auto& [f, v] : flattened_error(ws)) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(FrameScore, MaxOverTracksAndMonotone) {
  const std::vector<double> v = {0.2, 1.5, 0.7};
  EXPECT_DOUBLE_EQ(*frame_score(v), 1.5);
  EXPECT_FALSE(frame_score(std::span<const double>{}).has_value());
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 10);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(5);
    for (auto& x : a) x = u(rng);
    auto b = a;
    b[static_cast<std::size_t>(i % 5)] += u(rng);
    EXPECT_GE(*frame_score(b), *frame_score(a));
  }
}

TEST(FrameScores, EmptyFramesGetVideoMinimum) {
  const std::vector<WindowErrors> ws = {window("a", {2, 3}, {5, 1}), window("b", {3}, {4}),
                                        window("c", {1}, {9}, "other")};
  const std::vector<FrameLabelSet> ls = {labels("v", 0, {0, 0, 1, 1, 0}), labels("w", 0, {0, 1})};
  const auto rows = frame_scores(ws, ls);
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_DOUBLE_EQ(rows[0].score, 4.0);  // empty: video min over frames 2,3 = min(5, max(1,4))
  EXPECT_DOUBLE_EQ(rows[2].score, 5.0);
  EXPECT_DOUBLE_EQ(rows[3].score, 4.0);
  EXPECT_DOUBLE_EQ(rows[4].score, 4.0);
  EXPECT_EQ(rows[2].label, 1);
  EXPECT_DOUBLE_EQ(rows[5].score, 0.0);  // no windows for video w
  EXPECT_EQ(rows[6].video_id, "w");

  const auto scaled = frame_scores(ws, ls, {ErrorMode::flattened, true});
  EXPECT_DOUBLE_EQ(scaled[2].score, 1.0);
  EXPECT_DOUBLE_EQ(scaled[3].score, 0.0);
}

TEST(Auc, Fixture) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, l), 0.75);
}

TEST(Auc, TiesPerfectAndDegenerate) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0, 1, 2, 3}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{3, 2, 1, 0}, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), DegenerateLabelsError);
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1}), ShapeError);
  EXPECT_THROW(roc_auc(std::vector<double>{1, std::nan("")}, std::vector<int>{0, 1}), NumericError);
}

TEST(Auc, MatchesBruteForceAndIsRankInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 300);
    std::uniform_int_distribution<int> level(0, 20);  // coarse grid forces ties
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = level(rng) * 0.1;
      l[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    const double a = roc_auc(s, l);
    EXPECT_NEAR(a, brute_auc(s, l), 1e-12);
    std::vector<double> t;
    for (double x : s) t.push_back(std::exp(3.0 * x) - 7.0);
    EXPECT_NEAR(roc_auc(t, l), a, 1e-12);
  }
}

TEST(Auc, HrMaskDropsFrames) {
  std::vector<ScoreRow> rows = {{"v", 0, 0.1, 0, 0}, {"v", 1, 0.9, 0, 1}, {"v", 2, 0.5, 1, 0}};
  EXPECT_DOUBLE_EQ(roc_auc(rows, false), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(rows, true), 1.0);
  MetricReport r;
  fill_auc(r, rows);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  EXPECT_DOUBLE_EQ(r.auc_hr, 1.0);
}

TEST(JointErrorMetric, Arithmetic) {
  const JointSet gt = flat_pose(0, 0);
  JointSet pred = gt;
  pred.joint(2) += Point(3, 4);
  pred.joint(kRoot) += Point(50, 50);
  const std::vector<JointSet> p = {pred}, g = {gt};
  EXPECT_DOUBLE_EQ(joint_error_metric(p, g), 5.0 / 17.0);
  const std::vector<JointSet> p2 = {pred, gt}, g2 = {gt, gt};
  EXPECT_DOUBLE_EQ(joint_error_metric(p2, g2), 5.0 / 34.0);
  EXPECT_THROW(joint_error_metric(p2, g), ShapeError);
}

TEST(ScoreCsv, RoundTripAndLabels) {
  const std::vector<ScoreRow> rows = {{"v", 0, 0.1, 0, 0}, {"v", 1, 1.0 / 3.0, 1, 1}};
  std::ostringstream os;
  write_score_csv(os, rows);
  const auto back = parse_score_csv(os.str());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].score, rows[1].score);
  EXPECT_EQ(back[1].hr_mask, 1);

  auto relabel = parse_score_csv("v,0,0.5\nv,1,0.7\n");
  const std::vector<FrameLabelSet> ls = {labels("v", 0, {0, 1})};
  apply_labels(relabel, ls);
  EXPECT_EQ(relabel[1].label, 1);
  relabel.push_back({"v", 9, 0.0, 0, 0});
  EXPECT_THROW(apply_labels(relabel, ls), DataError);
  EXPECT_THROW(parse_score_csv("v,x,0.5\n"), ParseError);
}

TEST(Report, NullsForMissingValues) {
  MetricReport r;
  r.error_mode = "summed";
  r.auc = 0.8;
  const auto j = to_json(r);
  EXPECT_DOUBLE_EQ(j["auc"].get<double>(), 0.8);
  EXPECT_TRUE(j["auc_hr"].is_null());
  EXPECT_EQ(parse_error_mode("summed"), ErrorMode::summed);
  EXPECT_THROW(parse_error_mode("max"), ConfigError);
}
