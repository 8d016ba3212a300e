#include "fredsr/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "fredsr/errors.hpp"

namespace fredsr {

namespace {
thread_local bool g_strict_domain = false;
}  // namespace

void set_strict_domain(bool enabled) { g_strict_domain = enabled; }
bool strict_domain() { return g_strict_domain; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<std::size_t>(shape_numel(shape)) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw ShapeError("undefined tensor");
  return impl_->shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw AxisError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0);
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!impl_) return {};
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!impl_) return {};
  if (impl_->node) throw InvalidArgument("cannot mutate the result of an operation");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch");
  std::int64_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw AxisError("index out of range");
    offset = offset * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(offset)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!impl_) return;
  if (impl_->node) throw InvalidArgument("requires_grad can only be set on leaves");
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return !impl_ || !impl_->node;
}

template <typename T>
const char* Tensor<T>::op() const {
  return (impl_ && impl_->node) ? impl_->node->op : "leaf";
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_) impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  if (!impl_) return {};
  if (!impl_->node && !impl_->requires_grad) return *this;
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad && !impl_->node);
}

template <typename T>
void Tensor<T>::backward() const {
  if (!impl_ || impl_->data.size() != 1) {
    throw ShapeError("backward() requires a scalar, got shape " +
                     (impl_ ? shape_string(impl_->shape) : std::string("undefined")));
  }
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of interior nodes.
  using ImplPtr = detail::TensorImpl<T>*;
  std::vector<ImplPtr> order;
  std::unordered_set<ImplPtr> visited;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->parents.size()) {
      ImplPtr parent = node->node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior grads are per-sweep; leaves accumulate across sweeps.
  for (ImplPtr t : order) {
    if (t->node) t->grad.assign(t->data.size(), T(0));
  }
  impl_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    ImplPtr t = *it;
    if (t->node && t->node->backward) t->node->backward(*t);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace fredsr
