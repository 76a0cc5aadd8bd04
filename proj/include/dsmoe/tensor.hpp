#pragma once

// Dense double-precision tensors with a dynamically recorded reverse-mode
// autodiff graph. Every op output keeps shared ownership of its inputs, so
// the graph for one forward pass lives exactly as long as its root handle.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsmoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
}

// Gradient callback of a recorded op. `input_grads[i]` is null when input i
// does not take part in differentiation; otherwise the rule must accumulate
// (+=) into it.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>*> input_grads)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  // Records a new op node. `name` is used in error messages.
  static Tensor from_op(const char* name, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Populates grads of every requires_grad leaf reachable from this scalar.
  // Leaf grads accumulate across calls; intermediate grads are recomputed.
  void backward() const;

  // Value copy with no graph history.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Per-op finiteness check on every recorded output (on by default).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- elementwise / shape ops -------------------------------------------
// Binary ops accept `b` either with a's shape or with a trailing suffix of
// a's shape, in which case b is expanded over a's leading dimensions.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// [m,k]x[k,n], [B,m,k]x[B,k,n] or [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_rows(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps = 1e-6);
// `scale` and `shift` may be undefined for a non-affine norm.
Tensor layernorm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-6);

// Rows along axis 0.
Tensor index_select(const Tensor& x, std::span<const std::size_t> rows);
// out has `num_rows` rows; out[rows[i]] += x[i].
Tensor scatter_add(const Tensor& x, std::span<const std::size_t> rows, std::size_t num_rows);

// [N,D] * w[N] row scaling.
Tensor scale_rows(const Tensor& x, const Tensor& w);
// [B,D] -> [B,count,D].
Tensor expand_tokens(const Tensor& x, std::size_t count);
// Slice of the last axis.
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces the last axis.
Tensor sum_last(const Tensor& x);

}  // namespace dsmoe
