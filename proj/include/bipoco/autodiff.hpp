#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Values are row-major
// batches (rows = samples). Calling backward() on a 1x1 node propagates
// gradients to every node; parameter leaves then hold dL/dparam.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bipoco/errors.hpp"

namespace bipoco::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), {}); }

  /// A leaf whose gradient is wanted (inputs under test, parameters).
  Var leaf(Matrix value) { return push(std::move(value), {}); }

  Var push(Matrix value, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Adds `g` into the gradient of node `id`.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(Var root) {
    if (root.tape() != this) throw ShapeError("backward called with a foreign node");
    if (root.value().size() != 1) throw ShapeError("backward needs a scalar root");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    }
  }

  const Matrix& out_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() * b.value(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// a * m for a constant matrix m.
inline Var matmul_const(Var a, const Matrix& m) {
  if (a.cols() != m.rows()) throw ShapeError("matmul_const: inner dimension mismatch");
  const std::size_t ia = a.id();
  return a.tape()->push(a.value() * m, [ia, m](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self) * m.transpose());
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self));
    t.accumulate(ib, t.out_grad(self));
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self));
    t.accumulate(ib, -t.out_grad(self));
  });
}

/// a (n x m) + row (1 x m), broadcast over rows.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias shape mismatch");
  const std::size_t ia = a.id(), ir = row.id();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(v), [ia, ir](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self));
    t.accumulate(ir, t.out_grad(self).colwise().sum());
  });
}

inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

/// Elementwise product with a constant matrix of the same shape.
inline Var mul_const(Var a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ShapeError("mul_const: shape mismatch");
  const std::size_t ia = a.id();
  return a.tape()->push(a.value().cwiseProduct(c), [ia, c](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self).cwiseProduct(c));
  });
}

/// scale * a + shift
inline Var affine(Var a, double scale, double shift = 0.0) {
  const std::size_t ia = a.id();
  Matrix v = (a.value() * scale).array() + shift;
  return a.tape()->push(std::move(v), [ia, scale](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self) * scale);
  });
}

inline Var sigmoid(Var a) {
  const std::size_t ia = a.id();
  Matrix v = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (t.out_grad(self).array() * y * (1.0 - y)).matrix());
  });
}

inline Var tanh(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().array().tanh().matrix();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (t.out_grad(self).array() * (1.0 - y.square())).matrix());
  });
}

inline Var relu(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().cwiseMax(0.0);
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const Matrix mask = (t.value(ia).array() > 0.0).cast<double>().matrix();
    t.accumulate(ia, t.out_grad(self).cwiseProduct(mask));
  });
}

inline Var exp(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().array().exp().matrix();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.out_grad(self).cwiseProduct(t.value(self)));
  });
}

inline Var square(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().array().square().matrix();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, 2.0 * t.out_grad(self).cwiseProduct(t.value(ia)));
  });
}

/// Elementwise |a|; subgradient 0 at the kink.
inline Var abs(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().cwiseAbs();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const Matrix sign = t.value(ia).array().sign().matrix();
    t.accumulate(ia, t.out_grad(self).cwiseProduct(sign));
  });
}

/// Euclidean norm of every row: (n x m) -> (n x 1). Gradient 0 at the zero row.
inline Var row_norm(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().rowwise().norm();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    const Matrix& n = t.value(self);
    const Matrix& g = t.out_grad(self);
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (n(r, 0) > 0.0) d.row(r) = x.row(r) * (g(r, 0) / n(r, 0));
    }
    t.accumulate(ia, d);
  });
}

inline Var row_sum(Var a) {
  const std::size_t ia = a.id();
  Matrix v = a.value().rowwise().sum();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    const Eigen::Index cols = t.value(ia).cols();
    t.accumulate(ia, g.replicate(1, cols));
  });
}

inline Var sum(Var a) {
  const std::size_t ia = a.id();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->push(std::move(v), [ia](Tape& t, std::size_t self) {
    const double g = t.out_grad(self)(0, 0);
    const Matrix& x = t.value(ia);
    t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g));
  });
}

inline Var mean(Var a) {
  return affine(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  Matrix v(a.rows(), ca + cb);
  v << a.value(), b.value();
  return a.tape()->push(std::move(v), [ia, ib, ca, cb](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ia, g.leftCols(ca));
    t.accumulate(ib, g.rightCols(cb));
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return parts.front().tape()->push(std::move(v), [spans](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Eigen::Index r0 = 0;
    for (const auto& [id, n] : spans) {
      t.accumulate(id, g.middleRows(r0, n));
      r0 += n;
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  const std::size_t ia = a.id();
  Matrix v = a.value().middleCols(start, count);
  return a.tape()->push(std::move(v), [ia, start, count](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    d.middleCols(start, count) = t.out_grad(self);
    t.accumulate(ia, d);
  });
}

}  // namespace bipoco::ad
