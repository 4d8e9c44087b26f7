#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace lvat {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Dense row-major tensor of doubles. Plain value type; when `tape` is set the
// tensor is additionally a handle to a node on that tape and participates in
// reverse-mode differentiation. Values are never mutated after construction by
// any op, which keeps replays bit-identical.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  Tape* tape = nullptr;
  int node = -1;
  // Set when an op produced NaN/Inf (or inherited it from an operand). Callers
  // that care must check; ops themselves never throw on non-finite values.
  bool nonfinite = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double value);
  static Tensor scalar(double value);
  static Tensor from(std::vector<double> v, Shape s);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool recorded() const { return tape != nullptr; }
  bool is_scalar() const { return values.size() == 1; }
  bool all_finite() const;
  // Value of a single-element tensor.
  double item() const;
};

// Value copy with no tape attachment.
Tensor detach(const Tensor& t);

// Append-only gradient tape. Node indices are topologically ordered by
// construction, so backward() is a single reverse sweep. A tape is built per
// forward pass and thrown away; it is confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad,
                                        const std::vector<std::vector<double>*>& parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records a leaf holding a copy of `value`. The argument must not already be
  // recorded anywhere.
  Tensor input(const Tensor& value);

  // Accumulates gradients of a scalar recorded root into per-node buffers.
  // Nodes unreachable from the root keep zero gradients. May be called more
  // than once; each call resets the buffers.
  void backward(const Tensor& root);

  // Gradient of the last backward() pass w.r.t. a tensor recorded here.
  Tensor grad(const Tensor& t) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Op plumbing: registers a node and returns its index. Parents must be valid
  // node indices on this tape.
  int emit(const Shape& shape, std::vector<int> parents, BackwardFn fn);

 private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool has_grads_ = false;
};

// Elementwise binary ops with trailing-dimension broadcasting (dims aligned
// from the right; each pair must match or one side must be 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor neg(const Tensor& a);

// 2-D matrix product [M x K] * [K x N] -> [M x N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Reductions over the given axes (empty = all axes). With keepdims the reduced
// extents stay as 1, otherwise they are removed.
Tensor reduce_sum(const Tensor& a, std::vector<std::size_t> axes = {}, bool keepdims = false);
Tensor reduce_mean(const Tensor& a, std::vector<std::size_t> axes = {}, bool keepdims = false);

Tensor reshape(const Tensor& a, Shape target);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Column selection on 2-D tensors; indices may repeat for gather but must be
// unique for scatter. scatter_cols places columns of `a` at `idx` inside a
// zero tensor with `out_cols` columns. The two are adjoint, which is exactly
// their backward rule.
Tensor gather_cols(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor scatter_cols(const Tensor& a, const std::vector<std::size_t>& idx, std::size_t out_cols);

// Rowwise max of a 2-D tensor as a detached [B x 1] constant. Used for the
// shift inside softmax; the shift cancels analytically, so no gradient flows
// through it.
Tensor row_max_const(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

}  // namespace lvat
