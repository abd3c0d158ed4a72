#include <gtest/gtest.h>

#include <sstream>

#include "bipoco/training.hpp"

using namespace bipoco;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 2;
  c.model.encoder_hidden = 8;
  c.model.decoder_hidden = 8;
  c.model.decoder_input = 4;
  c.model.latent_dim = 2;
  c.rng_seed = 3;
  return c;
}

std::vector<WindowedSample> tiny_windows(int tracks = 2, int frames = 13, std::uint64_t seed = 1) {
  return make_windows(synth_gait(tracks, frames, {}, seed).sequences, 3, 3);
}

}  // namespace

TEST(TrainConfig, Validation) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.model.delta = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lr_decay_factor = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.weights.beta = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(benchmark_epochs(3, false), 250);
  EXPECT_EQ(benchmark_epochs(13, false), 500);
  EXPECT_EQ(benchmark_epochs(3, true), 500);
}

TEST(Train, RejectsEmptyOrMismatchedWindows) {
  const std::vector<WindowedSample> none;
  EXPECT_THROW(train(tiny_config(), none), ConfigError);
  const auto w = make_windows(synth_gait(1, 12, {}, 1).sequences, 2, 3);
  EXPECT_THROW(train(tiny_config(), w), ConfigError);
}

TEST(PlateauSchedule, ReducesAfterPatienceExceeded) {
  PlateauSchedule s(1.0, 0.5, 2, 0.0);
  EXPECT_FALSE(s.update(10));
  EXPECT_FALSE(s.update(10));
  EXPECT_FALSE(s.update(10));
  EXPECT_TRUE(s.update(10));
  EXPECT_DOUBLE_EQ(s.lr(), 0.5);
  EXPECT_FALSE(s.update(9));
  EXPECT_DOUBLE_EQ(s.lr(), 0.5);

  PlateauSchedule rel(1.0, 0.2, 0, 0.1);
  EXPECT_FALSE(rel.update(100));
  EXPECT_TRUE(rel.update(95));  // not 10% better
  EXPECT_DOUBLE_EQ(rel.lr(), 0.2);
  EXPECT_FALSE(rel.update(80));
}

TEST(Train, MetricsLogHasEveryStep) {
  const auto w = tiny_windows();
  std::ostringstream metrics;
  TrainOptions opt;
  opt.metrics = &metrics;
  const auto r = train(tiny_config(), w, opt);
  std::istringstream in(metrics.str());
  std::string line;
  std::int64_t expect = 1;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "epoch", "L_T", "L_B", "L_E", "L_J", "KLD", "total", "lr"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_EQ(j["step"].get<std::int64_t>(), expect++);
    EXPECT_TRUE(std::isfinite(j["total"].get<double>()));
  }
  // 16 windows, batch 8, 2 epochs.
  EXPECT_EQ(r.steps, 4);
  EXPECT_EQ(expect - 1, r.steps);
  EXPECT_EQ(r.epochs_run, 2);
  EXPECT_EQ(r.epoch_loss.size(), 2u);
}

TEST(Train, MaxStepsStopsEarly) {
  auto c = tiny_config();
  c.epochs = 100;
  c.max_steps = 3;
  const auto r = train(c, tiny_windows());
  EXPECT_EQ(r.steps, 3);
  EXPECT_EQ(r.epochs_run, 2);
}

TEST(Train, SameSeedSameModel) {
  const auto w = tiny_windows();
  const auto a = train(tiny_config(), w);
  const auto b = train(tiny_config(), w);
  auto c = tiny_config();
  c.rng_seed = 4;
  const auto d = train(c, w);
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
    EXPECT_EQ(a.model.parameters().at(i).value, b.model.parameters().at(i).value);
  }
  EXPECT_NE(a.model.parameters().at(0).value, d.model.parameters().at(0).value);
  EXPECT_EQ(a.last.loss.total, b.last.loss.total);
}

TEST(Train, LossDecreasesOnSmallSet) {
  auto c = tiny_config();
  c.epochs = 60;
  c.base_lr = 3e-3;
  const auto r = train(c, tiny_windows());
  EXPECT_LT(r.epoch_loss.back(), 0.5 * r.epoch_loss.front());
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  auto w = tiny_windows();
  w[5].target[1].bone(3) = Point(std::nan(""), 0.0);
  auto c = tiny_config();
  c.batch_size = 64;
  try {
    train(c, w);
    FAIL();
  } catch (const NonFiniteLossError& e) {
    const std::string msg = e.what();
    const std::string id = w[5].meta.video_id + "/" + w[5].meta.track_id + "@" + std::to_string(w[5].meta.start_frame);
    EXPECT_NE(msg.find(id), std::string::npos) << msg;
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
  }
}

TEST(Train, MaskNoneTotalIsTrajectoryLoss) {
  auto c = tiny_config();
  c.mask = losses::LossMask::none();
  TrainOptions opt;
  int seen = 0;
  opt.on_step = [&](const StepLog& s) {
    EXPECT_DOUBLE_EQ(s.loss.total, s.loss.trajectory);
    EXPECT_GT(s.loss.endpoint, 0.0);  // still computed and reported
    ++seen;
  };
  train(c, tiny_windows(), opt);
  EXPECT_GT(seen, 0);
}

TEST(Batch, LayoutIsStepMajor) {
  const auto w = tiny_windows();
  const std::vector<std::size_t> idx = {4, 1};
  const Batch b = make_batch(w, idx);
  ASSERT_EQ(b.observation.size(), 3u);
  EXPECT_EQ(b.observation[0].rows(), 2);
  EXPECT_EQ(b.target[2].row(0).transpose(), w[4].target[2].flatten());
  EXPECT_EQ(b.target_joints_px.rows(), 6);
  // row k*B + i holds step k of window i
  EXPECT_DOUBLE_EQ(b.target_joints_px(1 * 2 + 1, 0), w[1].target_joints[1].joint(1).x());
  EXPECT_DOUBLE_EQ(b.frame_dims(3, 0), 640.0);
}

TEST(Evaluate, RejectsMismatchedTimescale) {
  const auto r = train(tiny_config(), tiny_windows());
  const auto other = make_windows(synth_gait(1, 20, {}, 2).sequences, 5, 5);
  EXPECT_THROW(predict_windows(r.model, other), ConfigError);
  InferenceOptions bad;
  bad.k_samples = 0;
  EXPECT_THROW(predict_windows(r.model, tiny_windows(), bad), ConfigError);
}

TEST(Evaluate, ModesDifferAndReportIsComplete) {
  const auto r = train(tiny_config(), tiny_windows());
  const auto test = synth_gait(3, 40, {{0, 15, 25, AnomalyKind::jump}}, 9);
  const auto tw = make_windows(test.sequences, 3, 3);
  const std::vector<FrameLabelSet> labels = {test.labels};
  const auto s = evaluate_checkpoint(r.model, tw, labels, ErrorMode::summed);
  const auto f = evaluate_checkpoint(r.model, tw, labels, ErrorMode::flattened);
  EXPECT_EQ(s.scores.size(), 40u);
  EXPECT_NE(s.scores[20].score, f.scores[20].score);
  EXPECT_GE(s.report.auc, 0.0);
  EXPECT_LE(s.report.auc, 1.0);
  EXPECT_EQ(s.report.per_timescale.front().timescale, 3);
  EXPECT_GT(s.report.joint_error.anomalous_windows, 0u);
  EXPECT_GT(s.report.joint_error.normal_windows, 0u);
  EXPECT_EQ(s.report.joint_error.normal, f.report.joint_error.normal);
}

TEST(Evaluate, SingleWindowSummedIsDeltaTimesFlattened) {
  const auto r = train(tiny_config(), tiny_windows());
  const auto seq = synth_gait(1, 6, {}, 10).sequences;
  const auto tw = make_windows(seq, 3, 3);
  ASSERT_EQ(tw.size(), 1u);
  FrameLabelSet l;
  l.video_id = seq[0].video_id;
  l.first_frame = 3;
  l.labels = {0, 1, 0};
  const std::vector<FrameLabelSet> labels = {l};
  const auto s = evaluate_checkpoint(r.model, tw, labels, ErrorMode::summed).scores;
  const auto f = evaluate_checkpoint(r.model, tw, labels, ErrorMode::flattened).scores;
  double ss = 0, fs = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    ss += s[i].score;
    fs += f[i].score;
    EXPECT_DOUBLE_EQ(s[i].score, s[0].score);
  }
  EXPECT_NEAR(ss, 3.0 * fs, 1e-9 * ss);
}

TEST(Evaluate, BestOfKNeverWorseThanSingleDraw) {
  const auto r = train(tiny_config(), tiny_windows());
  const auto tw = tiny_windows(2, 14, 5);
  InferenceOptions one, many;
  one.latent_mode = LatentMode::stochastic;
  one.seed = many.seed = 11;
  many.k_samples = 5;
  const auto p1 = predict_windows(r.model, tw, one);
  const auto pk = predict_windows(r.model, tw, many);
  for (std::size_t i = 0; i < tw.size(); ++i) {
    EXPECT_LE(joint_error_metric(pk[i], tw[i].target_joints), joint_error_metric(p1[i], tw[i].target_joints) + 1e-12);
  }
}
