// SPDX-License-Identifier: Apache-2.0
#include "tds/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace tds {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (numel_of(shape) != data.size()) {
    throw ShapeError("data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= node_->shape.size()) {
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                     shape_str(node_->shape));
  }
  return node_->shape[i];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) {
    throw std::logic_error("mutable_data() is only allowed on leaf tensors");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw ShapeError("at(i, j) needs a rank-2 tensor");
  return node_->data[i * node_->shape[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) {
    throw std::logic_error("requires_grad can only be toggled on leaf tensors");
  }
  node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return from(shape(), node_->data, false);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS; recurrent graphs are deep.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward(n->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool record = g_grad_enabled &&
                      std::any_of(parents.begin(), parents.end(),
                                  [](const Tensor& t) { return t.requires_grad(); });
  if (record) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
  }
  return Tensor(std::move(node));
}

double* grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

}  // namespace detail

}  // namespace tds
