#include "bsrkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "bsrkit/error.hpp"

namespace bsrkit {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape, std::size_t n) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + to_string(shape));
  if (numel(shape) != n)
    throw DimensionError("data length " + std::to_string(n) + " does not match shape " +
                         to_string(shape));
}

void check_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("non-finite value in tensor");
}

}  // namespace

Tensor::Tensor() : Tensor(Shape{1}, {0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  check_shape(shape, data.size());
  check_finite(data);
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw IndexError("index rank mismatch");
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw IndexError("index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, requires_grad()); }

ComputationTape ComputationTape::record(const Tensor& root) {
  ComputationTape tape;
  // Iterative post-order DFS; only nodes that track gradients matter.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (root.node()->requires_grad) {
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  for (auto* node : tape.order_) {
    if (node->is_leaf()) continue;
    Entry e;
    for (auto& p : node->parents) e.inputs.push_back(p.get());
    e.output = node;
    e.op = node->op;
    tape.entries_.push_back(std::move(e));
  }
  return tape;
}

void ComputationTape::run_backward(const Tensor& root) const {
  // Interior gradients are transient: reset so repeated sweeps only
  // accumulate on leaves.
  for (auto* node : order_)
    if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf()) continue;
    node->backward(*node);
  }
  for (auto* node : order_) {
    if (node->is_leaf()) continue;
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward on a tensor that does not track gradients");
  ComputationTape::record(loss).run_backward(loss);
}

}  // namespace bsrkit
