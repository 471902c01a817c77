#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pgfa/tensor.hpp"

// Minimal reverse-mode autodiff over Tensor<T>. Ops build a DAG of Nodes;
// backward() walks it in reverse topological order. Nodes created while grad
// mode is off (NoGradGuard) carry no parents and no backward closure, so e.g.
// teacher forward passes cost nothing extra and can never receive gradients.
namespace pgfa::ag {

bool& grad_mode();

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives *this; reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    return grad;
  }
  void zero_grad() {
    if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), T(0));
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
Var<T> leaf(Tensor<T> v) {  // trainable parameter
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

// Builds an op node. The backward closure is dropped entirely when no parent
// needs gradients or grad mode is off.
template <typename T, typename F>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, F&& backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool need = false;
  if (grad_mode())
    for (const auto& p : parents) need = need || p->requires_grad;
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::forward<F>(backward_fn);
  }
  return n;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant<T>(x->value);
}

// Reverse-mode sweep from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS for topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace pgfa::ag
