#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bsrkit {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;
  std::string op;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major f64 array with optional reverse-mode gradient tracking.
//
// Tensor is a shared handle: copies alias the same storage, as in most
// autodiff libraries. Use `detach()` or `clone()` for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Direct write access; intended for optimizers and initializers acting on
  // leaves. Writing into an interior node invalidates its recorded graph.
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const& { return node_->value; }
  // Copy for temporaries, so range-for over a fresh result stays valid.
  std::vector<double> values() const&& { return node_->value; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; all zeros if backward never reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  // Same values, no history, does not require grad.
  Tensor detach() const;
  // Independent leaf copy that keeps the requires_grad flag.
  Tensor clone() const;

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Recorded operations reachable from a loss, in topological order (inputs
// before outputs). Built on demand from the dynamic graph.
class ComputationTape {
 public:
  struct Entry {
    std::vector<const detail::Node*> inputs;
    const detail::Node* output;
    std::string op;
  };

  static ComputationTape record(const Tensor& root);

  const std::vector<Entry>& entries() const { return entries_; }
  // Runs every entry's backward rule once, in reverse order.
  void run_backward(const Tensor& root) const;

 private:
  std::vector<detail::Node*> order_;
  std::vector<Entry> entries_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
// additively across calls; zero them explicitly between steps.
void backward(const Tensor& loss);

}  // namespace bsrkit
