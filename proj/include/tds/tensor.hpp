// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tds {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on incompatible operand shapes or invalid arguments to an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient accumulator.
///
/// A Tensor is a cheap handle onto a shared node. Values written by an op
/// are never modified afterwards; only leaves (parameters) are updated in
/// place by the optimizer through mutable_data(). When grad mode is on and
/// any operand requires a gradient, each op records its backward closure so
/// that backward() can walk the tape in reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// Empty span when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; interior gradients are reset at the start of each sweep.
  void backward() const;

  /// Copy of the values with no graph history.
  Tensor detach() const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

bool grad_enabled();

/// Disables tape recording for the lifetime of the guard (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds an op result. Records `backward` only if some parent needs a
/// gradient and grad mode is on. Throws NumericError on non-finite output.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward);

/// Gradient buffer of `t`, or nullptr when `t` takes no part in
/// differentiation.
double* grad_sink(const Tensor& t);

}  // namespace detail

}  // namespace tds
