#include "dci/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dci/error.hpp"

namespace dci {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

// Records `value` on the tape shared by the tracked operands, or returns it
// untracked when no operand is tracked.
Tensor finish(Tensor value, std::initializer_list<const Tensor*> operands, const char* op, BackwardFn fn) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ContractError(std::string(op) + ": operands belong to different tapes");
    }
    tape = t->tape();
  }
  if (tape == nullptr) return value;
  std::vector<const Tensor*> ops(operands);
  return tape->record(std::move(value), ops, op, std::move(fn));
}

Tensor finish_many(Tensor value, std::span<const Tensor> operands, const char* op, BackwardFn fn) {
  Tape* tape = nullptr;
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(operands.size());
  for (const Tensor& t : operands) {
    ptrs.push_back(&t);
    if (!t.tracked()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw ContractError(std::string(op) + ": operands belong to different tapes");
    }
    tape = t.tape();
  }
  if (tape == nullptr) return value;
  return tape->record(std::move(value), ptrs, op, std::move(fn));
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape_));
  }
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("matrix literal must be non-empty");
  std::vector<double> data;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw DimensionError("matrix literal rows differ in length");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() requires a single-element tensor, got " + shape_to_string(shape_));
  return data_[0];
}

Tensor Tensor::detached() const { return Tensor(shape_, data_); }

// ---- Tape -----------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value.detached();
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{"leaf", {}, out.shape(), nullptr});
  return out;
}

Tensor Tape::record(Tensor value, std::span<const Tensor* const> operands, std::string op, BackwardFn fn) {
  Node node{std::move(op), {}, value.shape(), std::move(fn)};
  node.inputs.reserve(operands.size());
  for (const Tensor* t : operands) {
    if (t->tracked() && t->tape() != this) throw ContractError(node.op + ": operand belongs to another tape");
    node.inputs.push_back(t->tracked() ? t->node() : kNone);
  }
  value.tape_ = this;
  value.node_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return value;
}

void Tape::backward(const Tensor& root) {
  if (root.tape() != this) throw ContractError("backward: root is not tracked on this tape");
  if (root.numel() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_to_string(root.shape()));
  }
  grads_.assign(nodes_.size(), {});
  has_grad_.assign(nodes_.size(), false);
  grads_[root.node()] = {1.0};
  has_grad_[root.node()] = true;

  std::vector<std::vector<double>*> buffers;
  for (NodeId id = root.node() + 1; id-- > 0;) {
    if (!has_grad_[id]) continue;
    Node& node = nodes_[id];
    if (!node.backward) continue;
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      NodeId in = node.inputs[k];
      if (in == kNone) continue;
      if (!has_grad_[in]) {
        grads_[in].assign(product(nodes_[in].shape), 0.0);
        has_grad_[in] = true;
      }
      buffers[k] = &grads_[in];
    }
    node.backward(grads_[id], buffers);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw ContractError("grad: tensor is not tracked on this tape");
  if (t.node() < has_grad_.size() && has_grad_[t.node()]) return Tensor(t.shape(), grads_[t.node()]);
  return Tensor::zeros(t.shape());
}

void backward(const Tensor& root) {
  if (!root.tracked()) throw ContractError("backward: root is not tracked on any tape");
  root.tape()->backward(root);
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  return finish(Tensor({m, n}, std::move(out)), {&a, &b}, "matmul",
                [av = a.values(), bv = b.values(), m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  if (auto* ga = gi[0]) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                        (*ga)[i * k + p] += s;
                      }
                  }
                  if (auto* gb = gi[1]) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
                      }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return finish(Tensor({c, r}, std::move(out)), {&a}, "transpose",
                [r, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) (*gi[0])[i * c + j] += g[j * r + i];
                });
}

// ---- element-wise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, "add",
                [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (auto* buf : gi)
                    if (buf)
                      for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, "sub",
                [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  if (gi[0])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                  if (gi[1])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, "mul",
                [av = a.values(), bv = b.values()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  if (gi[0])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
                  if (gi[1])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
                });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return finish(Tensor(a.shape(), std::move(out)), {&a}, "scale",
                [factor](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
                });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return finish(Tensor(a.shape(), std::move(out)), {&a}, "relu",
                [av = a.values()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > 0.0) (*gi[0])[i] += g[i];
                });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    const double u = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  return finish(Tensor(a.shape(), std::move(out)), {&a}, "gelu",
                [av = a.values()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = av[i];
                    const double u = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
                    const double th = std::tanh(u);
                    const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
                    const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                    (*gi[0])[i] += g[i] * d;
                  }
                });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row_bias");
  const std::size_t t = x.shape()[0], d = x.shape()[1];
  if (bias.numel() != d) {
    throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) + " does not match width of " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> out(x.values());
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias[j];
  return finish(Tensor(x.shape(), std::move(out)), {&x, &bias}, "add_row_bias",
                [t, d](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  if (gi[0])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                  if (gi[1])
                    for (std::size_t i = 0; i < t; ++i)
                      for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += g[i * d + j];
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return finish(Tensor::scalar(s), {&a}, "sum", [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (double& v : *gi[0]) v += g[0];
  });
}

// ---- structural -----------------------------------------------------------

namespace {

// Pairwise summation keeps means of power-of-two copies exact.
double pairwise_sum(std::span<const Tensor> xs, std::size_t i) {
  if (xs.size() == 1) return xs.front()[i];
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half), i) + pairwise_sum(xs.subspan(half), i);
}

}  // namespace

Tensor reduce_mean(std::span<const Tensor> xs) {
  if (xs.empty()) throw EmptyReductionError("reduce_mean: empty sequence");
  for (const Tensor& x : xs) require_same_shape(xs.front(), x, "reduce_mean");
  const double inv = 1.0 / static_cast<double>(xs.size());
  std::vector<double> out(xs.front().numel(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pairwise_sum(xs, i) * inv;
  return finish_many(Tensor(xs.front().shape(), std::move(out)), xs, "reduce_mean",
                     [inv](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       for (auto* buf : gi)
                         if (buf)
                           for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i] * inv;
                     });
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw EmptyReductionError("concat_channels: empty sequence");
  const std::size_t t = xs.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& x : xs) {
    require_rank2(x, "concat_channels");
    if (x.shape()[0] != t) {
      throw DimensionError("concat_channels: token dimension mismatch " + shape_to_string(xs.front().shape()) +
                           " vs " + shape_to_string(x.shape()));
    }
    widths.push_back(x.shape()[1]);
    total += x.shape()[1];
  }
  std::vector<double> out(t * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < t; ++i)
      std::copy_n(xs[k].data().begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
    offset += widths[k];
  }
  return finish_many(Tensor({t, total}, std::move(out)), xs, "concat_channels",
                     [t, total, widths](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (auto* buf = gi[k]) {
                           for (std::size_t i = 0; i < t; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               (*buf)[i * widths[k] + j] += g[i * total + off + j];
                         }
                         off += widths[k];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> xs) {
  if (xs.empty()) throw EmptyReductionError("concat_rows: empty sequence");
  const std::size_t d = xs.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const Tensor& x : xs) {
    require_rank2(x, "concat_rows");
    if (x.shape()[1] != d) {
      throw DimensionError("concat_rows: channel width mismatch " + shape_to_string(xs.front().shape()) + " vs " +
                           shape_to_string(x.shape()));
    }
    rows += x.shape()[0];
    sizes.push_back(x.numel());
  }
  std::vector<double> out;
  out.reserve(rows * d);
  for (const Tensor& x : xs) out.insert(out.end(), x.data().begin(), x.data().end());
  return finish_many(Tensor({rows, d}, std::move(out)), xs, "concat_rows",
                     [sizes](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         if (auto* buf = gi[k])
                           for (std::size_t i = 0; i < sizes[k]; ++i) (*buf)[i] += g[off + i];
                         off += sizes[k];
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_channels");
  const std::size_t t = x.shape()[0], d = x.shape()[1];
  if (begin >= end || end > d) {
    throw IndexError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(t * w);
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(x.data().begin() + i * d + begin, w, out.begin() + i * w);
  return finish(Tensor({t, w}, std::move(out)), {&x}, "slice_channels",
                [t, d, w, begin](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < t; ++i)
                    for (std::size_t j = 0; j < w; ++j) (*gi[0])[i * d + begin + j] += g[i * w + j];
                });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t t = x.shape()[0], d = x.shape()[1];
  if (begin >= end || end > t) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return finish(Tensor({end - begin, d}, std::move(out)), {&x}, "slice_rows",
                [d, begin](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[begin * d + i] += g[i];
                });
}

// ---- normalization / softmax ---------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t t = x.shape()[0], d = x.shape()[1];
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_to_string(gamma.shape()) + "/" +
                         shape_to_string(beta.shape()) + " do not match width of " + shape_to_string(x.shape()));
  }
  std::vector<double> xhat(t * d, 0.0);
  std::vector<double> inv_std(t, 0.0);
  std::vector<double> out(t * d);
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double denom = var + eps;
    if (denom > 0.0) {
      inv_std[i] = 1.0 / std::sqrt(denom);
      for (std::size_t j = 0; j < d; ++j) xhat[i * d + j] = (row[j] - mean) * inv_std[i];
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = gamma[j] * xhat[i * d + j] + beta[j];
  }
  return finish(Tensor(x.shape(), std::move(out)), {&x, &gamma, &beta}, "layer_norm",
                [t, d, xhat = std::move(xhat), inv_std = std::move(inv_std), gv = gamma.values()](
                    std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < t; ++i) {
                    const double* gr = g.data() + i * d;
                    const double* xh = xhat.data() + i * d;
                    if (gi[0] && inv_std[i] > 0.0) {
                      double mean_dx = 0.0, mean_dx_xh = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = gr[j] * gv[j];
                        mean_dx += dxh;
                        mean_dx_xh += dxh * xh[j];
                      }
                      mean_dx /= static_cast<double>(d);
                      mean_dx_xh /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = gr[j] * gv[j];
                        (*gi[0])[i * d + j] += inv_std[i] * (dxh - mean_dx - xh[j] * mean_dx_xh);
                      }
                    }
                    if (gi[1])
                      for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += gr[j] * xh[j];
                    if (gi[2])
                      for (std::size_t j = 0; j < d; ++j) (*gi[2])[j] += gr[j];
                  }
                });
}

Tensor softmax_rows(const Tensor& x, bool causal) {
  require_rank2(x, "softmax_rows");
  const std::size_t t = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(t * n, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t limit = causal ? std::min(n, i + 1) : n;
    const double* row = x.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < limit; ++j) out[i * n + j] /= z;
  }
  Tensor result({t, n}, out);
  return finish(std::move(result), {&x}, "softmax_rows",
                [t, n, p = std::move(out)](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < t; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) (*gi[0])[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
                  }
                });
}

Tensor gather_elements(const Tensor& x, std::vector<std::size_t> index, Shape shape) {
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.numel()) {
      throw IndexError("gather_elements: index " + std::to_string(index[i]) + " outside tensor of " +
                       std::to_string(x.numel()) + " elements");
    }
    out[i] = x[index[i]];
  }
  return finish(Tensor(std::move(shape), std::move(out)), {&x}, "gather_elements",
                [index = std::move(index)](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < index.size(); ++i) (*gi[0])[index[i]] += g[i];
                });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t v = table.shape()[0], e = table.shape()[1];
  if (ids.empty()) throw EmptyReductionError("embedding: empty id sequence");
  std::vector<double> out(ids.size() * e);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(v) + ")");
    }
    std::copy_n(table.data().begin() + static_cast<std::size_t>(ids[i]) * e, e, out.begin() + i * e);
  }
  return finish(Tensor({ids.size(), e}, std::move(out)), {&table}, "embedding",
                [e, idv = std::vector<int>(ids.begin(), ids.end())](std::span<const double> g,
                                                                     std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < idv.size(); ++i)
                    for (std::size_t j = 0; j < e; ++j) (*gi[0])[static_cast<std::size_t>(idv[i]) * e + j] += g[i * e + j];
                });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const int> mask) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t t = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != t || mask.size() != t) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for " + std::to_string(t) + " positions");
  }
  std::size_t active = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " outside [0, " +
                       std::to_string(v) + ")");
    }
    if (mask[i]) ++active;
  }
  if (active == 0) throw EmptyReductionError("softmax_cross_entropy: every position is masked");

  const double inv = 1.0 / static_cast<double>(active);
  std::vector<double> probs(t * v, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    const double* row = logits.data().data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[targets[i]];
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
  }
  loss *= inv;
  return finish(Tensor::scalar(loss), {&logits}, "softmax_cross_entropy",
                [t, v, inv, probs = std::move(probs), tv = std::vector<int>(targets.begin(), targets.end()),
                 mv = std::vector<int>(mask.begin(), mask.end())](std::span<const double> g,
                                                                  std::span<std::vector<double>* const> gi) {
                  for (std::size_t i = 0; i < t; ++i) {
                    if (!mv[i]) continue;
                    for (std::size_t j = 0; j < v; ++j) {
                      double d = probs[i * v + j] - (static_cast<int>(j) == tv[i] ? 1.0 : 0.0);
                      (*gi[0])[i * v + j] += g[0] * inv * d;
                    }
                  }
                });
}

// ---- gradient check -------------------------------------------------------

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol) {
  GradCheckReport report;
  report.tolerance = tol;
  {
    Tape tape;
    Tensor leaf = tape.leaf(x);
    Tensor y = f(leaf);
    if (!y.tracked()) {
      report.analytic.assign(x.numel(), 0.0);
    } else {
      tape.backward(y);
      report.analytic = tape.grad(leaf).values();
    }
  }
  report.numeric.resize(x.numel());
  Tensor probe = x.detached();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe).item();
    probe[i] = orig - h;
    const double fm = f(probe).item();
    probe[i] = orig;
    report.numeric[i] = (fp - fm) / (2.0 * h);
    const double err = relative_error(report.analytic[i], report.numeric[i]);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace dci
