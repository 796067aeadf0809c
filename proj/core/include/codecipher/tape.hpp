#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "codecipher/tensor.hpp"
#include "codecipher/types.hpp"

namespace codecipher {

class Tape;

/// Handle to a node recorded on a Tape. Only meaningful with the tape that created it.
class Var {
 public:
  Var() = default;
  std::size_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  explicit Var(std::size_t index) : index_(index) {}
  std::size_t index_ = static_cast<std::size_t>(-1);
};

/// Reverse-mode gradient tape over Tensor2D values.
///
/// Nodes are appended in evaluation order; backward() walks them once in
/// reverse. Gradients of a node used several times accumulate. A tape is
/// single-use: a second backward() throws StateError.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Owned leaf whose gradient is tracked.
  Var leaf(Tensor2D value);
  /// Leaf that reads an external tensor without copying; `value` must outlive the tape.
  Var leaf_ref(const Tensor2D& value);
  /// Owned value with no gradient.
  Var constant(Tensor2D value);
  /// External value with no gradient; `value` must outlive the tape.
  Var constant_ref(const Tensor2D& value);

  const Tensor2D& value(Var v) const;
  /// Gradient of the last backward() loss with respect to `v` (zeros if unreached).
  const Tensor2D& grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a 1x1 node and
  /// the most recently recorded one.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Op plumbing, used by the free functions below.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var record(Tensor2D value, bool requires_grad, BackwardFn backward);
  Tensor2D& grad_mut(std::size_t index);
  Tensor2D& grad_mut(Var v) { return grad_mut(v.index_); }
  const Tensor2D& value_at(std::size_t index) const;
  bool requires_grad_at(std::size_t index) const { return nodes_[index].requires_grad; }

 private:
  struct Node {
    Tensor2D owned;
    const Tensor2D* external = nullptr;
    Tensor2D grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::size_t checked(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable ops. All throw ShapeError on incompatible operands.

Var matmul(Tape& t, Var a, Var b);
/// a · bᵀ
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// Adds a 1×cols row to every row of `a`.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double factor);
/// Tanh-approximated GELU.
Var gelu(Tape& t, Var a);
/// Row-wise layer normalisation with 1×cols gain and bias.
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
/// Row lookup; repeated ids accumulate into the same table row on backward.
Var gather_rows(Tape& t, Var table, std::span<const TokenId> ids);
Var concat_rows(Tape& t, Var top, Var bottom);
Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t end);
/// Multi-head causal self-attention over a packed [n × 3d] query/key/value input.
Var causal_attention(Tape& t, Var qkv, std::size_t n_heads);
/// Mean over rows of −log softmax(logits[r])[targets[r]], as a 1×1 node.
/// Throws IndexError for a target outside [0, cols).
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const TokenId> targets);
/// Sum of all elements, as a 1×1 node.
Var sum(Tape& t, Var a);

}  // namespace codecipher
