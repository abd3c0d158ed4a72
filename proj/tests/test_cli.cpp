#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "bipoco/cli.hpp"

using namespace bipoco;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "bipoco");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bipoco_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string data(const std::string& file) { return std::string(BIPOCO_TEST_DATA) + "/" + file; }

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

}  // namespace

TEST(Cli, EvalOnFixture) {
  const auto r = invoke({"eval", "--scores", data("auc_fixture.csv")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "auc 0.75\n");
}

TEST(Cli, EvalWritesReport) {
  const auto dir = fresh_dir("eval_report");
  const auto r = invoke({"eval", "--scores", data("auc_fixture.csv"), "--report", (dir / "r.json").string(),
                      "--error-mode", "summed", "--hr-mask"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "auc 0.75\nauc_hr 0.75\n");
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  EXPECT_EQ(j["error_mode"], "summed");
  EXPECT_DOUBLE_EQ(j["auc"].get<double>(), 0.75);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(invoke({"plot", "--scores", data("empty_scores.csv"), "--out", fresh_dir("plot_empty").string()}).code, 3);
  EXPECT_EQ(invoke({"eval", "--scores", data("auc_fixture.csv"), "--bogus"}).code, 2);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"eval", "--scores", "/nonexistent/scores.csv"}).code, 3);
  EXPECT_EQ(invoke({"prepare", "--poses", "/nonexistent", "--out", "/tmp/x.json"}).code, 3);
  EXPECT_EQ(invoke({"--help"}).code, 0);
  const auto dir = fresh_dir("bad_flag_value");
  EXPECT_EQ(invoke({"synth", "--out", dir.string(), "--anomaly", "0:5:9:dance"}).code, 2);
}

TEST(Cli, SynthIsDeterministic) {
  const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  for (const auto& d : {a, b}) {
    const auto r = invoke({"synth", "--out", d.string(), "--seed", "4", "--videos", "2", "--tracks", "2", "--frames",
                        "30", "--anomalous-tracks", "1", "--segment-length", "8"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("anomalous fraction"), std::string::npos);
  }
  EXPECT_EQ(slurp(a / "poses.jsonl"), slurp(b / "poses.jsonl"));
  EXPECT_EQ(slurp(a / "labels.csv"), slurp(b / "labels.csv"));
}

TEST(Cli, PrepareIsIdempotentAndWritesManifest) {
  const auto dir = fresh_dir("prepare");
  ASSERT_EQ(invoke({"synth", "--out", (dir / "in").string(), "--tracks", "2", "--frames", "20"}).code, 0);
  const std::string poses = (dir / "in" / "poses.jsonl").string();
  ASSERT_EQ(invoke({"prepare", "--poses", poses, "--out", (dir / "a1.json").string(), "--timescale", "3"}).code, 0);
  ASSERT_EQ(invoke({"prepare", "--poses", poses, "--out", (dir / "a2.json").string(), "--timescale", "3"}).code, 0);
  EXPECT_EQ(slurp(dir / "a1.json"), slurp(dir / "a2.json"));
  const auto a = cli::load_archive((dir / "a1.json").string());
  const auto m = cli::manifest(a);
  EXPECT_EQ(m["windows"].get<int>(), 2 * (20 - 6 + 1));
  EXPECT_EQ(a.windows().size(), 30u);

  // A directory of pose files gives the same archive.
  ASSERT_EQ(invoke({"prepare", "--poses", (dir / "in").string(), "--out", (dir / "sub" / "a3.json").string(), "--timescale", "3"})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "a1.json"), slurp(dir / "sub" / "a3.json"));
}

TEST(Cli, EndToEndMatchesLibrary) {
  const auto dir = fresh_dir("e2e");
  ASSERT_EQ(invoke({"synth", "--out", dir.string(), "--tracks", "3", "--frames", "30", "--seed", "2", "--anomaly",
                 "1:10:18:jump"})
                .code,
            0);
  ASSERT_EQ(invoke({"prepare", "--poses", (dir / "poses.jsonl").string(), "--out", (dir / "arch.json").string()}).code,
            0);
  const auto tr = invoke({"train", "--archive", (dir / "arch.json").string(), "--out", (dir / "run").string(),
                       "--timescale", "3", "--losses", "E", "--epochs", "2", "--batch-size", "16", "--seed", "9",
                       "--encoder-hidden", "8", "--decoder-hidden", "8", "--decoder-input", "4", "--latent-dim",
                       "2"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.ini"));
  EXPECT_NE(slurp(dir / "run" / "config.ini").find("losses"), std::string::npos);
  EXPECT_FALSE(slurp(dir / "run" / "metrics.jsonl").empty());

  const auto sc = invoke({"score", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--archive",
                       (dir / "arch.json").string(), "--labels", (dir / "labels.csv").string(), "--out",
                       (dir / "scores.csv").string(), "--error-mode", "summed"});
  ASSERT_EQ(sc.code, 0) << sc.err;
  const auto ev = invoke({"eval", "--scores", (dir / "scores.csv").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;

  // Same pipeline through the library.
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 16;
  t.rng_seed = 9;
  t.mask = losses::LossMask::parse("E");
  t.model.encoder_hidden = t.model.decoder_hidden = 8;
  t.model.decoder_input = 4;
  t.model.latent_dim = 2;
  const auto synth = synth_gait(3, 30, {{1, 10, 18, AnomalyKind::jump}}, 2);
  const auto windows = make_windows(synth.sequences, 3, 3);
  const auto model = train(t, windows).model;
  const std::vector<FrameLabelSet> labels = {synth.labels};
  const auto lib = evaluate_checkpoint(model, windows, labels, ErrorMode::summed);
  // Scores are read back from text written with round-trip precision; the JSONL
  // pose file stores shortest round-trip doubles, so the inputs agree too.
  EXPECT_EQ(ev.out, "auc " + cli::fmt(lib.report.auc) + "\n");
  const auto csv = load_score_csv((dir / "scores.csv").string());
  ASSERT_EQ(csv.size(), lib.scores.size());
  for (std::size_t i = 0; i < csv.size(); ++i) EXPECT_EQ(csv[i].score, lib.scores[i].score) << i;

  const auto report = nlohmann::json::parse(slurp(dir / "scores.csv.json"));
  EXPECT_EQ(report["error_mode"], "summed");
  EXPECT_DOUBLE_EQ(report["auc"].get<double>(), lib.report.auc);

  const auto pl = invoke({"plot", "--scores", (dir / "scores.csv").string(), "--out", (dir / "plots").string()});
  ASSERT_EQ(pl.code, 0) << pl.err;
  EXPECT_TRUE(fs::exists(dir / "plots" / "synth.svg"));

  EXPECT_EQ(invoke({"train", "--archive", (dir / "arch.json").string(), "--out", (dir / "run2").string(),
                 "--timescale", "5"})
                .code,
            2);
  EXPECT_EQ(invoke({"train", "--archive", (dir / "arch.json").string(), "--out", (dir / "run3").string(), "--losses",
                 "Q"})
                .code,
            2);
}

TEST(Cli, ScoreWithoutLabels) {
  const auto dir = fresh_dir("score_nolabels");
  ASSERT_EQ(invoke({"synth", "--out", dir.string(), "--tracks", "1", "--frames", "12"}).code, 0);
  ASSERT_EQ(invoke({"prepare", "--poses", (dir / "poses.jsonl").string(), "--out", (dir / "a.json").string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--archive", (dir / "a.json").string(), "--out", (dir / "run").string(), "--epochs", "1",
                 "--encoder-hidden", "4", "--decoder-hidden", "4", "--decoder-input", "2", "--latent-dim", "2"})
                .code,
            0);
  const auto sc = invoke({"score", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--archive",
                       (dir / "a.json").string(), "--out", (dir / "s.csv").string()});
  ASSERT_EQ(sc.code, 0) << sc.err;
  // Frames 3..11 are predicted.
  EXPECT_EQ(load_score_csv((dir / "s.csv").string()).size(), 9u);
}
