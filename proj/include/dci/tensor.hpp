#pragma once

// Dense float64 tensors with an explicit reverse-mode tape.
//
// A Tensor is a value: shape plus row-major data. A tensor becomes tracked by
// registering it on a Tape (Tape::leaf). Every operation below that receives
// at least one tracked operand records a node on that operand's tape and
// returns a tracked result; operations on untracked operands only compute the
// forward value. Operands from two different tapes are rejected.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dci {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class Tape;

std::string shape_to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  /// Throws DimensionError when product(shape) != data.size() or a dimension
  /// is zero.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  /// Builds a rows x cols matrix from nested rows (all rows equal length).
  static Tensor matrix(const std::vector<std::vector<double>>& rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading / trailing extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  /// Copy of the value with tape participation removed.
  Tensor detached() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = std::numeric_limits<NodeId>::max();
};

/// Receives the gradient of the node's output and one accumulation buffer
/// per operand, in operand order; buffers for untracked operands are null.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

/// Append-only record of one forward computation. Not thread-safe; use one
/// tape per thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a copy of `value` as a leaf and returns the tracked copy.
  Tensor leaf(const Tensor& value);

  /// Records an operation result. Operands that are not on this tape must be
  /// untracked; their gradients are not requested.
  Tensor record(Tensor value, std::span<const Tensor* const> operands, std::string op, BackwardFn fn);

  /// Populates gradients of `root` with respect to every node it reaches.
  /// Throws ContractError for a non-scalar or foreign root.
  void backward(const Tensor& root);

  /// Gradient for a tracked tensor after backward(); zeros when the node was
  /// unreachable from the root.
  Tensor grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

 private:
  static constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

  struct Node {
    std::string op;
    std::vector<NodeId> inputs;  // kNone for untracked operands
    Shape shape;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<bool> has_grad_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

/// Tanh approximation: 0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3))).
/// The recorded derivative is the exact derivative of this approximation.
Tensor gelu(const Tensor& a);
inline constexpr double kGeluSqrt2OverPi = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;

/// x[t x d] + bias[d] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// x * W + b for x[t x in], W[in x out], b[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Sum of all elements, as a shape {1} tensor.
Tensor sum(const Tensor& a);

/// Element-wise arithmetic mean of identically shaped tensors.
Tensor reduce_mean(std::span<const Tensor> xs);

/// Concatenation along the last dimension of rank-2 tensors sharing the
/// leading (token) dimension.
Tensor concat_channels(std::span<const Tensor> xs);

/// Concatenation along the leading dimension of rank-2 tensors sharing the
/// channel width.
Tensor concat_rows(std::span<const Tensor> xs);

/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

/// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

/// Per-row normalization with population variance, then gamma * xhat + beta.
/// A row with variance + eps == 0 normalizes to xhat = 0.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Row-wise softmax. With `causal`, entry (i, j) for j > i receives zero
/// probability.
Tensor softmax_rows(const Tensor& x, bool causal = false);

/// out.data[i] = x.data[index[i]], reshaped to `shape`.
Tensor gather_elements(const Tensor& x, std::vector<std::size_t> index, Shape shape);

/// Gathers rows of `table` [V x e] for each id.
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Mean negative log-likelihood over positions with mask == 1.
/// Throws EmptyReductionError when every position is masked and IndexError
/// for targets outside [0, V).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const int> mask);

/// Convenience forwarding to root.tape()->backward(root).
void backward(const Tensor& root);

// ---- finite-difference verification ---------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  double tolerance = 0.0;
  bool passed = false;
};

/// Relative error |a - b| / max(1e-8, |a| + |b|).
double relative_error(double a, double b);

/// Compares backward() against central differences (f(x + h e_i) - f(x - h e_i)) / 2h
/// for every coordinate of x. `f` must return a scalar and may be called with
/// tracked or untracked input.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace dci
