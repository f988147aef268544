#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive in execution order; a Var is a handle into
// it. Each node stores its value, the ids of its parents and a closure that
// pushes the node's gradient into its parents. First-order only: backward
// closures operate on plain tensors and are not themselves recorded.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "energyformer/tensor.hpp"

namespace ef {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class Precision { f64, f32 };

class Tape {
 public:
  // Receives the node's output gradient, its forward value and one slot per
  // parent; a slot is null when that parent does not need a gradient.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, const Tensor& out, std::span<Tensor* const> parent_grads)>;

  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf honoring `value.requires_grad()`.
  Var leaf(Tensor value);
  Var parameter(Tensor value);
  Var constant(Tensor value);

  /// Appends an op node. Rejects non-finite results; `name` appears in the error.
  Var record(const char* name, Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient of the last backward() target w.r.t. `v`. Zero if `v` did not contribute.
  Tensor grad(Var v) const;

  void backward(Var loss);
  /// Clears accumulated gradients so backward may run again.
  void reset_gradients();

  std::size_t size() const noexcept { return nodes_.size(); }
  Precision precision() const noexcept { return precision_; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // deque: value references stay valid while recording
  Precision precision_;
  bool backward_done_ = false;
};

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var rsqrt(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var silu(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

// Shape manipulation.
Var reshape(Var a, Shape shape);
/// Explicit broadcast: every axis of `a` is either equal to `shape` or 1.
Var expand(Var a, Shape shape);
/// Swaps the last two axes.
Var transpose(Var a);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var a, int axis, std::size_t begin, std::size_t end);

// Reductions. Axis variants keep the reduced axis with extent 1.
Var sum(Var a);
Var mean(Var a);
Var sum(Var a, int axis);
Var mean(Var a, int axis);
Var max_reduce(Var a, int axis);

/// Max-shifted log-sum-exp along `axis`. With `exclude_diagonal`, the last two
/// axes must be square and the entry whose index along `axis` equals its index
/// along the other of the two is left out of the reduction.
Var logsumexp(Var a, int axis, bool exclude_diagonal = false);
/// Softmax along `axis`; excluded diagonal entries are exactly 0.
Var softmax(Var a, int axis, bool exclude_diagonal = false);

/// Normalizes over the last axis to mean 0 and variance 1 (population variance,
/// `eps` added under the square root).
Var layernorm(Var a, double eps = 1e-12);
/// Same with affine gain/shift of shape [last extent].
Var layernorm(Var a, Var gain, Var shift, double eps = 1e-12);

/// Batched matrix product [.., m, k] x [.., k, n]; batch axes broadcast.
Var matmul(Var a, Var b);

/// Same-padded, stride-1 convolution. x: [B,H,W,Cin], kernel: [kh,kw,Cin,Cout]
/// with odd kh, kw; bias: [Cout].
Var conv2d(Var x, Var kernel);
Var conv2d(Var x, Var kernel, Var bias);

/// Treats consecutive pairs (2m, 2m+1) of the last axis of `x` [.., N, 2P] as
/// complex numbers and multiplies pair m of row n by (re[n,m] + i im[n,m]), or
/// by its conjugate. Pairs with `active[n*P+m] == 0` are copied unchanged.
Var rotate_pairs(Var x, Var re, Var im, std::span<const std::uint8_t> active, bool conjugate = false);

}  // namespace ef
