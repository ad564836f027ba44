#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srmt/numkit/tensor.hpp"

namespace srmt::nk {

class Tape;

/// Value holder shared between a Var and the tape that recorded it.
struct Node {
  Tensor value;
  explicit Node(Tensor v) : value(std::move(v)) {}
};

using NodePtr = std::shared_ptr<Node>;

/// Handle to a tensor value, optionally tracked on a Tape.
///
/// An untracked Var is a constant: operations whose inputs are all
/// constants produce constants and record nothing, which is how rollouts
/// run inference without paying for gradient bookkeeping.
class Var {
 public:
  Var() = default;
  static Var constant(Tensor value) { return Var(std::make_shared<Node>(std::move(value))); }
  static Var constant(NodePtr node) { return Var(std::move(node)); }

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool defined() const { return node_ != nullptr; }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int slot() const { return slot_; }
  const NodePtr& node() const { return node_; }

 private:
  friend class Tape;
  explicit Var(NodePtr node, Tape* tape = nullptr, int slot = -1)
      : node_(std::move(node)), tape_(tape), slot_(slot) {}

  NodePtr node_;
  Tape* tape_ = nullptr;
  int slot_ = -1;
};

/// Leaf gradients produced by one backward pass.
class Gradients {
 public:
  /// Gradient of the loss with respect to a leaf; zeros if unreachable.
  Tensor of(const Var& leaf) const;
  Tensor of(const NodePtr& leaf) const;
  const std::unordered_map<const Node*, Tensor>& all() const { return grads_; }

 private:
  friend class Tape;
  std::unordered_map<const Node*, Tensor> grads_;
  std::unordered_map<const Node*, Shape> shapes_;
};

/// Ordered record of executed operations.
///
/// Tapes are single-use: backward() consumes the record and further use
/// throws ContractError. One tape belongs to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Fresh differentiable leaf owned by this tape.
  Var leaf(Tensor value);
  /// Existing node (e.g. a parameter) tracked as a leaf; watching the same
  /// node twice returns the same slot.
  Var watch(const NodePtr& node);

  Gradients backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Kernel plumbing.
  Var record(Tensor value, Backward fn);
  /// Gradient accumulator for a slot, zero-initialized on first touch.
  Tensor& grad(int slot);

 private:
  void require_live() const;

  std::vector<NodePtr> nodes_;
  std::vector<Backward> backward_;
  std::vector<Tensor> grads_;
  std::vector<char> is_leaf_;
  std::unordered_map<const Node*, int> watched_;
  bool consumed_ = false;
};

/// Globally toggles the NaN/Inf check performed on every kernel output.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---------------------------------------------------------------------------
// Differentiable kernels. A Var argument may be tracked or constant; when
// several tracked arguments are given they must share one tape.

Var matmul(const Var& a, const Var& b);       ///< [r×k]·[k×c]
Var matmul_nt(const Var& a, const Var& b);    ///< [r×k]·[c×k]ᵀ
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// x[...×c] + bias[c], broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var softmax(const Var& x);       ///< over the last axis, max-subtracted
Var log_softmax(const Var& x);   ///< over the last axis
/// Per-row normalization, eps = 1e-5, then gain ⊙ x̂ + bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias);
/// 3×3 same-padding stride-1 cross-correlation; input [Cin×H×W] or
/// [N×Cin×H×W],
/// kernels [Cout×Cin×3×3], optional bias [Cout].
Var conv2d(const Var& input, const Var& kernels, const Var& bias = Var());
/// x[r×k]·w[k×c] + b[c]; `b` may be undefined.
Var linear(const Var& x, const Var& w, const Var& b = Var());
/// Multi-head scaled dot-product attention without masking: q [T×d],
/// k and v [S×d], `heads` equal slices of d. Returns [T×d].
Var attention(const Var& q, const Var& k, const Var& v, int heads);
Var reshape(const Var& x, Shape shape);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& x, int start, int count);
/// out[i] = x[index[i]] row-wise; repeated indices accumulate gradient.
Var gather_rows(const Var& x, const std::vector<int>& index);
Var slice_cols(const Var& x, int start, int count);
Var sum(const Var& x);
Var mean(const Var& x);
/// out[i] = x[i, index[i]] for x viewed as [r×c].
Var pick(const Var& x, const std::vector<int>& index);
/// Elementwise clamp; gradient passes only strictly inside (lo, hi).
Var clamp(const Var& x, double lo, double hi);
/// Elementwise minimum; gradient goes to the smaller operand (a on ties).
Var minimum(const Var& a, const Var& b);
Var detach(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace srmt::nk
