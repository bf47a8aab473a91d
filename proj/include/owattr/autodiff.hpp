#pragma once

// Define-by-run reverse-mode differentiation over Tensor-valued operations.
// A Tape records every operation in a flat list; backward() walks that list in
// exact reverse order. Tapes are single-owner and are reset between training
// steps rather than reused.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "owattr/tensor.hpp"

namespace owattr::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
};

/// Gradients produced by one backward pass, indexed by tape node.
class Gradients {
 public:
  /// Gradient of the loss with respect to v; zeros when v did not influence the loss.
  Tensor of(Var v) const;
  bool touched(Var v) const;
  /// Node ids in the order their backward rules ran.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
  std::vector<std::size_t> visit_order_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input; receives a gradient.
  Var leaf(Tensor value, std::string name = "leaf");
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  Var record(std::string op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Throws ShapeError when loss is not a scalar.
  Gradients backward(Var loss) const;

  void reset() { nodes_.clear(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline constexpr double kLogEps = 1e-12;

// Elementwise arithmetic (same shapes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

// Linear algebra on [rows, cols] matrices.
Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
Var add_row(Var x, Var bias);  // x[m,n] + bias[n] broadcast over rows
Var mul_row(Var x, Var gain);  // x[m,n] * gain[n] broadcast over rows
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var slice_rows(Var x, std::size_t begin, std::size_t end);

// Nonlinearities.
Var tanh(Var x);
Var sigmoid(Var x);
/// log(x + kLogEps).
Var log_eps(Var x);
/// Divides each row by its L2 norm.
Var normalize_rows(Var x);
/// Row-wise softmax of x / temperature.
Var softmax_rows(Var x, double temperature);

// Reductions.
Var sum(Var x);
Var mean(Var x);
Var col_mean(Var x);  // [m,n] -> [n]

/// Per-row cross entropy -sum_j t_ij log(p_ij + kLogEps), [m,n] x [m,n] -> [m].
Var cross_entropy_rows(Var target, Var pred);

/// Row-batched orthonormal 2-D DCT-II / DCT-III; each row is an [h, w] image.
Var dct2_rows(Var x, std::size_t h, std::size_t w);
Var idct2_rows(Var x, std::size_t h, std::size_t w);

/// Same value, recorded as a constant: stops gradient flow.
Var detach(Var x);

}  // namespace owattr::ad
