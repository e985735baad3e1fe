#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "lvprune/numerics/tensor.hpp"

namespace lvprune::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  double scalar() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Operations append nodes in evaluation order;
// backward() replays their adjoints in reverse. Nodes whose inputs do not
// require gradients store no adjoint, so frozen subgraphs cost nothing on the
// backward pass and never receive gradient buffers.
//
// A tape belongs to one thread and one forward/backward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  // Leaves that reference caller-owned storage; it must outlive the tape and
  // stay unmodified until the tape is destroyed.
  Var constant_view(const Tensor& value);
  Var parameter_view(const Tensor& value);

  // Appends a derived node. `backward` is kept only if some input requires
  // gradients; it must route grad_out into inputs via accumulate().
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id_];
    return n.view != nullptr ? *n.view : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

  // Gradient of the last backward() root with respect to v. Zero-filled if v
  // was not reached; empty if v does not require gradients.
  Tensor grad(Var v) const;
  // Like grad() but moves the buffer out; v's gradient is empty afterwards.
  Tensor take_grad(Var v);

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad.noalias() = g;
      return;
    }
    n.grad.noalias() += g;
  }

  // Adds g into the block of v's gradient whose top-left corner is (row, col).
  template <typename Derived>
  void accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Tensor::Zero(value(v).rows(), value(v).cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and runs all adjoints.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* view = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  Var push(Tensor value, bool requires_grad, Backward backward);

  std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
// Adds a constant (non-differentiable) tensor, e.g. an additive causal mask.
Var add_constant(Var a, const Tensor& c);
Var square(Var a);
Var silu(Var a);
Var row_softmax(Var a);
Var masked_row_softmax(Var a, Var mask);
Var layer_norm(Var x, Var gain, Var bias, double eps);

Var gather_rows(Var a, std::span<const int> rows);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

// Rotary position encoding applied independently to each head block of
// `head_dim` columns. Column pairs (2i, 2i+1) inside a head are rotated by
// position * base^(-2i/head_dim).
Var rotary(Var a, std::span<const int> positions, Eigen::Index head_dim, double base);

Var sum(Var a);
Var mean(Var a);
// Elementwise Huber penalty with threshold beta.
Var huber(Var a, double beta);
// Mean over `rows` of -log softmax(logits[row])[target].
Var cross_entropy(Var logits, std::span<const int> rows, std::span<const int> targets);
// Forward value is `hard`; the gradient is passed to `soft` unchanged.
Var straight_through(Var soft, Tensor hard);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace lvprune::ad
