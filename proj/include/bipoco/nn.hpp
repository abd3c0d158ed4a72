#pragma once

// Trainable parameters, dense and gated-recurrent layers, and Adam.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bipoco/autodiff.hpp"

namespace bipoco::nn {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Adam moments
  Matrix m;
  Matrix v;
};

/// Owns all weights of a model, keyed by layer name, in creation order.
class ParameterStore {
 public:
  std::size_t add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Parameter p;
    p.name = name;
    p.grad = Matrix::Zero(init.rows(), init.cols());
    p.m = p.grad;
    p.v = p.grad;
    p.value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }
  Parameter& at(const std::string& name) { return params_.at(index_.at(name)); }
  const Parameter& at(const std::string& name) const { return params_.at(index_.at(name)); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Binds parameters onto a tape for one forward pass and collects their
/// gradients back after Tape::backward.
class Binding {
 public:
  Binding(Tape& tape, ParameterStore& store) : Binding(tape, std::as_const(store)) {
    mutable_store_ = &store;
  }
  /// Read-only binding: gradients stay on the tape.
  Binding(Tape& tape, const ParameterStore& store) : tape_(&tape), store_(&store) {
    vars_.resize(store.size());
    bound_.assign(store.size(), false);
  }

  Tape& tape() { return *tape_; }

  Var operator()(std::size_t i) {
    if (!bound_[i]) {
      vars_[i] = tape_->leaf(store_->at(i).value);
      bound_[i] = true;
    }
    return vars_[i];
  }

  /// Adds tape gradients into Parameter::grad.
  void collect_grads() {
    if (mutable_store_ == nullptr) throw ConfigError("collect_grads on a read-only binding");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (bound_[i]) mutable_store_->at(i).grad += vars_[i].grad();
    }
  }

 private:
  Tape* tape_;
  const ParameterStore* store_;
  ParameterStore* mutable_store_ = nullptr;
  std::vector<Var> vars_;
  std::vector<bool> bound_;
};

inline Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

/// y = x W + b
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng)
      : in_(in), out_(out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = store.add(name + ".weight", uniform_init(in, out, bound, rng));
    bias_ = store.add(name + ".bias", uniform_init(1, out, bound, rng));
  }

  Var operator()(Binding& b, Var x) const {
    if (x.cols() != in_) {
      throw ShapeError("linear layer expects " + std::to_string(in_) + " inputs, got " +
                       std::to_string(x.cols()));
    }
    return ad::add_row(ad::matmul(x, b(weight_)), b(bias_));
  }

  int in() const { return in_; }
  int out() const { return out_; }

 private:
  int in_ = 0;
  int out_ = 0;
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
};

/// Gated recurrent cell with reset gate applied after the hidden projection.
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng)
      : in_(in), hidden_(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_in_ = store.add(name + ".w_in", uniform_init(in, 3 * hidden, bound, rng));
    b_in_ = store.add(name + ".b_in", uniform_init(1, 3 * hidden, bound, rng));
    w_hid_ = store.add(name + ".w_hid", uniform_init(hidden, 3 * hidden, bound, rng));
    b_hid_ = store.add(name + ".b_hid", uniform_init(1, 3 * hidden, bound, rng));
  }

  Var operator()(Binding& b, Var x, Var h) const {
    if (x.cols() != in_ || h.cols() != hidden_) throw ShapeError("GRU cell input shape mismatch");
    const Eigen::Index H = hidden_;
    Var gi = ad::add_row(ad::matmul(x, b(w_in_)), b(b_in_));
    Var gh = ad::add_row(ad::matmul(h, b(w_hid_)), b(b_hid_));
    Var r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, H), ad::slice_cols(gh, 0, H)));
    Var z = ad::sigmoid(ad::add(ad::slice_cols(gi, H, H), ad::slice_cols(gh, H, H)));
    Var n = ad::tanh(ad::add(ad::slice_cols(gi, 2 * H, H), ad::mul(r, ad::slice_cols(gh, 2 * H, H))));
    // h' = n + z (h - n)
    return ad::add(n, ad::mul(z, ad::sub(h, n)));
  }

  int in() const { return in_; }
  int hidden() const { return hidden_; }

 private:
  int in_ = 0;
  int hidden_ = 0;
  std::size_t w_in_ = 0, b_in_ = 0, w_hid_ = 0, b_hid_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.all()) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& p : store.all()) p.grad *= s;
  }
  return norm;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore& store, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : store.all()) {
      p.m = cfg_.beta1 * p.m + (1.0 - cfg_.beta1) * p.grad;
      p.v = cfg_.beta2 * p.v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      const auto mhat = p.m.array() / c1;
      const auto vhat = p.v.array() / c2;
      p.value.array() -= lr * mhat / (vhat.sqrt() + cfg_.eps);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace bipoco::nn
