#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

enum class Mode { kTrain, kEval };

// One node of the dynamically recorded computation graph. The backprop
// closure reads this node's grad and accumulates into the parents' grads.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
  }
};

// Value-semantics handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Var result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                    std::function<void(Node<T>&)> backprop) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) {
      if (p && p->requires_grad) needs = true;
    }
    if (needs) {
      v.node_->requires_grad = true;
      v.node_->parents = std::move(parents);
      v.node_->backprop = std::move(backprop);
    }
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }

  Tensor<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Tensor<T>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar root. Rejects roots that were never
// recorded on the tape (nothing upstream requires a gradient).
template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined variable");
  if (root.value().numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + root.value().shape_str());
  }
  if (!root.requires_grad()) {
    throw std::invalid_argument("backward: variable was not recorded on the tape");
  }

  // Iterative post-order DFS for a topological ordering.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      Node<T>* parent = top.node->parents[top.next_parent++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

}  // namespace cornerdet
