// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "ctcsr/core/tensor.hpp"

namespace ctcsr {

// Tape node. Forward ops build the graph eagerly; backward() walks it once in
// reverse topological order. Non-leaf buffers are released as soon as their
// backward hook has run, which keeps peak memory near the forward footprint.
template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool keep = false;  // retain value through a releasing backward pass
  std::vector<std::shared_ptr<VarNode>> inputs;
  std::function<void(VarNode&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  // Accumulates g into grad, allocating on first touch.
  void add_grad_from(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    T* dst = grad.data();
    const T* src = g.data();
    int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
using Var = std::shared_ptr<VarNode<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs,
                 std::function<void(VarNode<T>&)> backward_fn) {
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

namespace detail {

template <typename T>
void topo_order(VarNode<T>* root, std::vector<VarNode<T>*>& order) {
  std::unordered_set<VarNode<T>*> seen;
  std::vector<std::pair<VarNode<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      VarNode<T>* in = node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. With release=true every non-leaf,
// non-keep node drops its buffers right after use.
template <typename T>
void backward(const Var<T>& root, bool release = true) {
  assert(root->value.numel() == 1);
  if (!root->requires_grad) return;
  std::vector<VarNode<T>*> order;
  detail::topo_order(root.get(), order);
  root->grad = Tensor<T>::full(root->value.shape(), T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    if (release && !n->is_leaf()) {
      n->grad.release();
      if (!n->keep) n->value.release();
    }
  }
}

template <typename T>
void zero_grad(const Var<T>& v) {
  v->grad.release();
}

}  // namespace ctcsr
