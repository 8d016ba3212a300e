#pragma once

// Internal helpers for building graph nodes. Not installed.

#include <algorithm>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr::detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Wraps `values` into an operation result. When any input is tracked the
/// result records `backward`, which receives the output gradient.
template <typename T, typename Fn>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (any_requires_grad<T>(inputs)) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    for (const auto* t : inputs) {
      if (t == nullptr || !t->defined() || !t->requires_grad()) continue;
      // A tensor used twice by one op (x * x) is still a single parent edge.
      if (std::find(node->parents.begin(), node->parents.end(), t->impl()) == node->parents.end()) {
        node->parents.push_back(t->impl());
      }
    }
    node->backward = std::forward<Fn>(backward);
    impl->node = std::move(node);
  }
  return Tensor<T>::from_impl(std::move(impl));
}

/// Grad buffer of `t` if it participates in differentiation, else nullptr.
template <typename T>
std::vector<T>* grad_of(const std::shared_ptr<TensorImpl<T>>& t) {
  if (!t || !t->requires_grad) return nullptr;
  return &t->grad_buffer();
}

}  // namespace fredsr::detail
