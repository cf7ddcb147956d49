#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "emoformer/errors.hpp"

namespace emoformer::nn {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// One recorded value in the computation graph. backward_fn reads this
// node's grad and accumulates into the parents' grads.
template <class S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

// Tape recording is suspended inside a NoGradGuard (inference paths).
bool& autograd_enabled();

struct NoGradGuard {
  NoGradGuard() : prev(autograd_enabled()) { autograd_enabled() = false; }
  ~NoGradGuard() { autograd_enabled() = prev; }
  bool prev;
};

// Shared handle to a graph node. Copies alias the same storage.
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static TensorT filled(Shape shape, S value, bool requires_grad = false) {
    auto node = std::make_shared<Node<S>>();
    node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  static TensorT from_data(Shape shape, std::vector<S> data,
                           bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("Tensor: data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node<S>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  const std::vector<S>& data() const { return node_->data; }
  // Direct mutation is for parameters and optimizer state only; mutating a
  // tensor that sits on a live tape invalidates recorded gradients.
  std::vector<S>& mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(node_->data.size(), S(0));
  }

  S scalar() const {
    if (numel() != 1)
      throw ShapeError("Tensor::scalar: tensor has " +
                       std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  // Deep copy with no graph history.
  TensorT detached_copy() const {
    auto node = std::make_shared<Node<S>>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return TensorT(std::move(node));
  }

  std::shared_ptr<Node<S>> node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

template <class S>
void check_finite(const char* op, const TensorT<S>& t) {
  const auto& d = t.data();
  for (size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i]))
      throw NumericFault(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
  }
}

// Builds the op result node: the tape is recorded only when autograd is on
// and some input carries requires_grad.
template <class S>
TensorT<S> make_op_result(const char* op, Shape shape, std::vector<S> data,
                          std::vector<std::shared_ptr<Node<S>>> parents,
                          std::function<void(Node<S>&)> backward_fn) {
  bool needs_grad = false;
  if (autograd_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) needs_grad = true;
  }
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  TensorT<S> out(std::move(node));
  check_finite(op, out);
  return out;
}

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse topological order.
template <class S>
void backward(const TensorT<S>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ValidationError("backward: loss must be a defined scalar tensor");

  auto root = loss.node();
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  // Iterative post-order DFS over parents.
  struct Frame {
    Node<S>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (root->requires_grad) {
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
  }
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      Node<S>* parent = top.node->parents[top.next_parent++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  if (!root->grad.empty()) root->grad[0] = S(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace emoformer::nn
