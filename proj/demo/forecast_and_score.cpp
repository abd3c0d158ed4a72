// Trains a small forecaster on synthetic walking, prints one forecast next to
// the ground truth, then scores a video with an injected jump.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "bipoco/training.hpp"

using namespace bipoco;

int main(int argc, char** argv) {
  const int epochs = argc > 1 ? std::atoi(argv[1]) : 10;

  SynthDatasetOptions tr;
  tr.tracks = 60;
  tr.frames = 60;
  tr.video_prefix = "train";
  std::vector<PoseSequence> train_tracks;
  for (auto& v : synth_dataset(tr, 1)) {
    for (auto& s : v.sequences) train_tracks.push_back(std::move(s));
  }
  const auto train_windows = make_windows(train_tracks, 3, 3);

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.mask = losses::LossMask::parse("all");
  cfg.model.encoder_hidden = cfg.model.decoder_hidden = 32;
  cfg.model.latent_dim = 16;
  cfg.model.decoder_input = 32;
  cfg.rng_seed = 2;

  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions opt;
  opt.on_step = [](const StepLog& s) {
    if (s.step % 100 == 0) std::printf("step %5lld  total %.4f  L_T %.4f  lr %.2g\n", static_cast<long long>(s.step),
                                       s.loss.total, s.loss.trajectory, s.lr);
  };
  const auto result = train(cfg, train_windows, opt);
  std::printf("trained %lld steps on %zu windows in %.1f s\n", static_cast<long long>(result.steps),
              train_windows.size(), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  // One forecast: left wrist (joint 10) over the three predicted frames.
  const auto test = synth_gait(3, 120, {{1, 50, 74, AnomalyKind::jump}}, 99);
  const auto windows = make_windows(test.sequences, 3, 3);
  const auto& w = windows[10];
  std::mt19937_64 rng(0);
  const auto pred = result.model.predict(w.observation, w.meta.frame_width, w.meta.frame_height, LatentMode::mean, rng);
  std::printf("\ntrack %s, frames %d..%d, left wrist (px)\n", w.meta.track_id.c_str(), w.target_frame(0),
              w.target_frame(2));
  for (int k = 0; k < 3; ++k) {
    const Point p = pred.joints[static_cast<std::size_t>(k)].joint(10);
    const Point g = w.target_joints[static_cast<std::size_t>(k)].joint(10);
    std::printf("  frame %d  predicted (%7.2f, %7.2f)  actual (%7.2f, %7.2f)\n", w.target_frame(k), p.x(), p.y(),
                g.x(), g.y());
  }

  const std::vector<FrameLabelSet> labels = {test.labels};
  const auto ev = evaluate_checkpoint(result.model, windows, labels, ErrorMode::flattened);
  std::printf("\nframe AUC %.4f (jump on track 1, frames 50-73)\n", ev.report.auc);
  std::printf("joint error: normal windows %.2f px, anomalous windows %.2f px\n", ev.report.joint_error.normal,
              ev.report.joint_error.anomalous);
  for (int f = 40; f < 90; f += 5) {
    const auto& r = ev.scores[static_cast<std::size_t>(f)];
    std::printf("  frame %3d  label %d  score %10.1f\n", r.frame, r.label, r.score);
  }
  return 0;
}
