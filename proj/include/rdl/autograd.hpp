#pragma once

// Tape-free reverse-mode autodiff: every differentiable op returns a Var whose
// node remembers its inputs and a closure that pushes the output gradient back
// into them. backward() walks the recorded graph in reverse topological order.

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "rdl/errors.hpp"
#include "rdl/tensor.hpp"

namespace rdl::tg {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T> &)> backward_fn;

  Tensor<T> &grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// While alive, ops on this thread record nothing (teacher forward passes,
/// evaluation).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename T>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Builds an op result. The closure is attached only when some parent needs
  /// a gradient and recording is enabled.
  static Var from_op(Tensor<T> value, std::vector<Var> parents,
                     std::function<void(Node<T> &)> backward_fn) {
    Var v = constant(std::move(value));
    v.node_->leaf = false;
    if (!grad_enabled()) return v;
    bool any = false;
    for (const auto &p : parents) any = any || p.requires_grad();
    if (!any) return v;
    v.node_->requires_grad = true;
    for (auto &p : parents) v.node_->parents.push_back(p.node_);
    v.node_->backward_fn = std::move(backward_fn);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T> &value() const { return node_->value; }
  Tensor<T> &mutable_value() { return node_->value; }
  const Shape &shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T> &grad() const { return node_->grad; }
  Tensor<T> &mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  Node<T> &node() const { return *node_; }
  const std::shared_ptr<Node<T>> &node_ptr() const { return node_; }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Without retain_graph the recording is released and a second
/// call throws GraphConsumed.
template <typename T>
void backward(const Var<T> &loss, bool retain_graph = false) {
  if (!loss.defined()) throw GraphConsumed("backward on an undefined value");
  Node<T> &root = loss.node();
  if (root.released) throw GraphConsumed("the recorded computation was already released");
  if (root.value.numel() != 1) {
    throw ShapeMismatch("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) return;

  // iterative post-order DFS
  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> seen;
  std::vector<std::pair<Node<T> *, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T> *p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T> *n : order) {
    if (!n->leaf) n->grad = Tensor<T>();
  }
  root.grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> *n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }

  if (!retain_graph) {
    for (Node<T> *n : order) {
      if (n->leaf) continue;
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad = Tensor<T>();
      n->released = true;
    }
  }
}

/// Adds `g` into the gradient buffer of a node that requires one.
template <typename T>
void accumulate(Node<T> &node, const Tensor<T> &g) {
  if (!node.requires_grad) return;
  auto &buf = node.grad_buffer();
  T *dst = buf.data();
  const T *src = g.data();
  for (std::size_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
}

/// A trainable tensor with a stable dotted name ("blocks.0.layers.2.weight").
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool decay = true;  // weight decay applies (conv/linear weights only)
};

}  // namespace rdl::tg
