#pragma once

// Goal-conditioned bi-directional CVAE trajectory predictor over 36-D
// root+bone pose features.
//
// Pipeline per batch:
//   h      = GRU encoder over the τ observed steps
//   prior  = N(μp, diag σp²) from h;  recognition = N(μq, diag σq²) from [h, GRU(target)]
//   z      ~ recognition (training) or prior (inference)
//   goal   = last observed pose + MLP([h, z])
//   bones  = last observed pose + readout([forward_k, backward_k]) for k = 1..δ
// The forward GRU rolls out from [h, z] without a pose readout; the backward
// GRU starts from [h, z], consumes the goal, and runs from t+δ down to t+1,
// feeding each step's pose estimate to the next (earlier) step.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bipoco/autodiff.hpp"
#include "bipoco/nn.hpp"
#include "bipoco/skeleton.hpp"

namespace bipoco {

enum class LatentMode { mean, stochastic };

inline std::string to_string(LatentMode m) { return m == LatentMode::mean ? "mean" : "stochastic"; }

inline LatentMode parse_latent_mode(const std::string& s) {
  if (s == "mean") return LatentMode::mean;
  if (s == "stochastic") return LatentMode::stochastic;
  throw ConfigError("latent mode must be 'mean' or 'stochastic', got '" + s + "'");
}

struct PredictorConfig {
  int feature_dim = kFeatureDim;
  int encoder_hidden = 256;
  int latent_dim = 32;
  int decoder_hidden = 256;
  int decoder_input = 64;
  int goal_mlp_layers = 3;
  int tau = 3;
  int delta = 3;
  int k_samples = 1;
  LatentMode latent_mode = LatentMode::mean;

  void validate() const {
    if (feature_dim != kFeatureDim) throw ConfigError("feature_dim must be 36");
    if (encoder_hidden < 1 || latent_dim < 1 || decoder_hidden < 1 || decoder_input < 1) {
      throw ConfigError("network dimensions must be positive");
    }
    if (goal_mlp_layers != 3) throw ConfigError("goal MLP has exactly 3 layers");
    if (tau < 1 || delta < 1) throw ConfigError("tau and delta must be >= 1");
    if (k_samples < 1) throw ConfigError("k_samples must be >= 1");
  }

  bool operator==(const PredictorConfig&) const = default;
};

/// Diagonal Gaussian as plain vectors.
struct LatentGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_variance;
};

/// KL(q || p) for diagonal Gaussians.
inline double kl_divergence(const LatentGaussian& q, const LatentGaussian& p) {
  if (q.mean.size() != p.mean.size()) throw ShapeError("kl_divergence: dimension mismatch");
  const Eigen::ArrayXd vq = q.log_variance.array().exp();
  const Eigen::ArrayXd vp = p.log_variance.array().exp();
  const Eigen::ArrayXd d = (q.mean - p.mean).array();
  return 0.5 * ((p.log_variance - q.log_variance).array() + (vq + d.square()) / vp - 1.0).sum();
}

/// Gaussian head outputs on a tape, one row per batch sample.
struct GaussianVars {
  ad::Var mean;
  ad::Var logvar;
};

struct PredictionResult {
  std::vector<BoneSet> bones;
  /// Output of the goal network (pose at step δ in relative coordinates).
  BoneSet goal;
  std::vector<JointSet> joints;
};

class Predictor {
 public:
  using Var = ad::Var;
  using Binding = nn::Binding;

  struct TapeOutput {
    std::vector<Var> bones;  // δ x (batch x 36)
    Var goal;
    GaussianVars prior;
    GaussianVars recognition;  // only set on the training path
    Var z;
  };

  explicit Predictor(PredictorConfig cfg, std::uint64_t init_seed = 0) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    const int F = cfg_.feature_dim, He = cfg_.encoder_hidden, L = cfg_.latent_dim;
    const int Hd = cfg_.decoder_hidden, Di = cfg_.decoder_input;
    const int G1 = Hd, G2 = std::max(1, Hd / 2);
    encoder_ = nn::GRUCell(store_, "encoder.gru", F, He, rng);
    target_encoder_ = nn::GRUCell(store_, "recognition.target_gru", F, He, rng);
    prior_head_ = nn::Linear(store_, "prior.head", He, 2 * L, rng);
    recog_head_ = nn::Linear(store_, "recognition.head", 2 * He, 2 * L, rng);
    goal1_ = nn::Linear(store_, "goal.fc1", He + L, G1, rng);
    goal2_ = nn::Linear(store_, "goal.fc2", G1, G2, rng);
    goal3_ = nn::Linear(store_, "goal.fc3", G2, F, rng);
    fwd_init_ = nn::Linear(store_, "decoder.forward_init", He + L, Hd, rng);
    bwd_init_ = nn::Linear(store_, "decoder.backward_init", He + L, Hd, rng);
    fwd_input_ = nn::Linear(store_, "decoder.forward_input", Hd, Di, rng);
    fwd_gru_ = nn::GRUCell(store_, "decoder.forward_gru", Di, Hd, rng);
    bwd_input_ = nn::Linear(store_, "decoder.backward_input", F, Di, rng);
    bwd_gru_ = nn::GRUCell(store_, "decoder.backward_gru", Di, Hd, rng);
    readout_ = nn::Linear(store_, "decoder.readout", 2 * Hd, F, rng);
  }

  const PredictorConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  // ---- batched tape-level operations ---------------------------------------

  /// GRU over the observed steps; returns (batch x encoder_hidden).
  Var encode(Binding& b, const std::vector<Var>& observation) const {
    check_steps(observation, cfg_.tau, "observation");
    return run_gru(b, encoder_, observation);
  }

  GaussianVars prior(Binding& b, Var hidden) const { return split_gaussian(prior_head_(b, hidden)); }

  GaussianVars recognition(Binding& b, Var hidden, const std::vector<Var>& target) const {
    check_steps(target, cfg_.delta, "target");
    Var ht = run_gru(b, target_encoder_, target);
    return split_gaussian(recog_head_(b, ad::concat_cols(hidden, ht)));
  }

  /// mean mode returns μ; stochastic mode returns μ + σ⊙ε with ε drawn from rng.
  Var sample_latent(Binding& b, const GaussianVars& g, LatentMode mode, std::mt19937_64& rng) const {
    if (mode == LatentMode::mean) return g.mean;
    std::normal_distribution<double> normal(0.0, 1.0);
    ad::Matrix eps(g.mean.rows(), g.mean.cols());
    for (Eigen::Index r = 0; r < eps.rows(); ++r) {
      for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = normal(rng);
    }
    Var sigma = ad::exp(ad::affine(g.logvar, 0.5));
    return ad::add(g.mean, ad::mul(sigma, b.tape().constant(std::move(eps))));
  }

  Var predict_goal(Binding& b, Var hidden, Var z, Var last_observed) const {
    Var x = ad::concat_cols(hidden, z);
    x = ad::relu(goal1_(b, x));
    x = ad::relu(goal2_(b, x));
    return ad::add(last_observed, goal3_(b, x));
  }

  /// Returns δ predicted poses; `decoder_state` is [h, z].
  std::vector<Var> decode_bidirectional(Binding& b, Var decoder_state, Var goal,
                                        Var last_observed) const {
    if (goal.cols() != cfg_.feature_dim) throw ShapeError("goal must be 36-D");
    const int delta = cfg_.delta;
    std::vector<Var> forward_states;
    forward_states.reserve(static_cast<std::size_t>(delta));
    Var hf = ad::relu(fwd_init_(b, decoder_state));
    for (int k = 0; k < delta; ++k) {
      hf = fwd_gru_(b, ad::relu(fwd_input_(b, hf)), hf);
      forward_states.push_back(hf);
    }
    std::vector<Var> out(static_cast<std::size_t>(delta));
    Var hb = ad::relu(bwd_init_(b, decoder_state));
    Var input = ad::relu(bwd_input_(b, goal));
    for (int k = delta - 1; k >= 0; --k) {
      hb = bwd_gru_(b, input, hb);
      const auto ku = static_cast<std::size_t>(k);
      out[ku] = ad::add(last_observed, readout_(b, ad::concat_cols(forward_states[ku], hb)));
      input = ad::relu(bwd_input_(b, out[ku]));
    }
    return out;
  }

  TapeOutput forward_train(Binding& b, const std::vector<Var>& observation,
                           const std::vector<Var>& target, std::mt19937_64& rng) const {
    TapeOutput o;
    Var h = encode(b, observation);
    o.prior = prior(b, h);
    o.recognition = recognition(b, h, target);
    o.z = sample_latent(b, o.recognition, LatentMode::stochastic, rng);
    decode_from(b, h, observation.back(), o);
    return o;
  }

  TapeOutput forward_infer(Binding& b, const std::vector<Var>& observation, LatentMode mode,
                           std::mt19937_64& rng) const {
    TapeOutput o;
    Var h = encode(b, observation);
    o.prior = prior(b, h);
    o.z = sample_latent(b, o.prior, mode, rng);
    decode_from(b, h, observation.back(), o);
    return o;
  }

  // ---- value-level convenience ---------------------------------------------

  /// Predicted bone features for a batch: observation holds τ matrices (batch x 36);
  /// returns δ matrices. Deterministic when mode is mean.
  std::vector<ad::Matrix> infer(const std::vector<ad::Matrix>& observation, LatentMode mode,
                                std::mt19937_64& rng) const {
    ad::Tape tape;
    Binding b(tape, store_);
    std::vector<Var> obs;
    obs.reserve(observation.size());
    for (const auto& m : observation) obs.push_back(tape.constant(m));
    const TapeOutput o = forward_infer(b, obs, mode, rng);
    std::vector<ad::Matrix> out;
    for (const auto& v : o.bones) out.push_back(v.value());
    return out;
  }

  Eigen::VectorXd encode(std::span<const BoneSet> observation) const {
    ad::Tape tape;
    Binding b(tape, store_);
    return encode(b, as_rows(tape, observation)).value().row(0).transpose();
  }

  LatentGaussian prior(const Eigen::VectorXd& hidden) const {
    ad::Tape tape;
    Binding b(tape, store_);
    return to_gaussian(prior(b, row_constant(tape, hidden, cfg_.encoder_hidden)));
  }

  LatentGaussian recognition(const Eigen::VectorXd& hidden, std::span<const BoneSet> target) const {
    ad::Tape tape;
    Binding b(tape, store_);
    return to_gaussian(
        recognition(b, row_constant(tape, hidden, cfg_.encoder_hidden), as_rows(tape, target)));
  }

  BoneSet predict_goal(const Eigen::VectorXd& hidden, const Eigen::VectorXd& z,
                       const BoneSet& last_observed) const {
    ad::Tape tape;
    Binding b(tape, store_);
    Var g = predict_goal(b, row_constant(tape, hidden, cfg_.encoder_hidden),
                         row_constant(tape, z, cfg_.latent_dim),
                         tape.constant(last_observed.flatten().transpose()));
    return BoneSet::unflatten(g.value().row(0).transpose());
  }

  std::vector<BoneSet> decode_bidirectional(const Eigen::VectorXd& hidden, const Eigen::VectorXd& z,
                                            const BoneSet& goal, const BoneSet& last_observed) const {
    ad::Tape tape;
    Binding b(tape, store_);
    Var state = ad::concat_cols(row_constant(tape, hidden, cfg_.encoder_hidden),
                                row_constant(tape, z, cfg_.latent_dim));
    const auto steps = decode_bidirectional(b, state, tape.constant(goal.flatten().transpose()),
                                            tape.constant(last_observed.flatten().transpose()));
    std::vector<BoneSet> out;
    for (const auto& s : steps) out.push_back(BoneSet::unflatten(s.value().row(0).transpose()));
    return out;
  }

  /// Single-sample inference returning bones, goal and recovered pixel joints.
  PredictionResult predict(std::span<const BoneSet> observation, double width, double height,
                           LatentMode mode, std::mt19937_64& rng) const {
    check_frame_dims(width, height);
    ad::Tape tape;
    Binding b(tape, store_);
    const TapeOutput o = forward_infer(b, as_rows(tape, observation), mode, rng);
    PredictionResult r;
    r.goal = BoneSet::unflatten(o.goal.value().row(0).transpose());
    for (const auto& s : o.bones) {
      r.bones.push_back(BoneSet::unflatten(s.value().row(0).transpose()));
      r.joints.push_back(bones_to_pose(r.bones.back(), width, height));
    }
    return r;
  }

 private:
  void decode_from(Binding& b, Var h, Var last_observed, TapeOutput& o) const {
    o.goal = predict_goal(b, h, o.z, last_observed);
    o.bones = decode_bidirectional(b, ad::concat_cols(h, o.z), o.goal, last_observed);
  }

  static void check_steps(const std::vector<Var>& steps, int expected, const char* what) {
    if (static_cast<int>(steps.size()) != expected) {
      throw ShapeError(std::string(what) + " has " + std::to_string(steps.size()) +
                       " steps, expected " + std::to_string(expected));
    }
    for (const auto& s : steps) {
      if (s.cols() != kFeatureDim || s.rows() != steps.front().rows()) {
        throw ShapeError(std::string(what) + " steps must be (batch x 36)");
      }
    }
  }

  Var run_gru(Binding& b, const nn::GRUCell& cell, const std::vector<Var>& steps) const {
    Var h = b.tape().constant(ad::Matrix::Zero(steps.front().rows(), cell.hidden()));
    for (const auto& x : steps) h = cell(b, x, h);
    return h;
  }

  GaussianVars split_gaussian(Var head) const {
    const int L = cfg_.latent_dim;
    return {ad::slice_cols(head, 0, L), ad::slice_cols(head, L, L)};
  }

  static LatentGaussian to_gaussian(const GaussianVars& g) {
    return {g.mean.value().row(0).transpose(), g.logvar.value().row(0).transpose()};
  }

  static Var row_constant(ad::Tape& tape, const Eigen::VectorXd& v, int expected) {
    if (v.size() != expected) throw ShapeError("vector has wrong dimension");
    return tape.constant(v.transpose());
  }

  static std::vector<Var> as_rows(ad::Tape& tape, std::span<const BoneSet> steps) {
    std::vector<Var> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(tape.constant(s.flatten().transpose()));
    return out;
  }

  PredictorConfig cfg_;
  nn::ParameterStore store_;
  nn::GRUCell encoder_, target_encoder_, fwd_gru_, bwd_gru_;
  nn::Linear prior_head_, recog_head_, goal1_, goal2_, goal3_;
  nn::Linear fwd_init_, bwd_init_, fwd_input_, bwd_input_, readout_;
};

}  // namespace bipoco
