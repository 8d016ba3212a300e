#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fredsr {

/// Extents of a tensor. Activations use N, C, H, W order.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// When enabled, log/sqrt of a negative 64-bit value throws DomainError
/// instead of producing NaN. 32-bit tensors always propagate NaN.
/// Thread-local.
void set_strict_domain(bool enabled);
bool strict_domain();

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  // Reads the output's data and grad; accumulates into the parents' grads.
  std::function<void(const TensorImpl<T>&)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with an optional reverse-mode autodiff record.
///
/// Tensors are cheap handles: copies share storage. Values produced by an
/// operation are never mutated afterwards; only leaves (parameters, buffers)
/// expose mutable storage, and only outside of a recorded graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const T> data() const;
  /// Writable storage of a leaf. Throws for operation results.
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  const char* op() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf.
  Tensor clone() const;

  /// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls.
  void backward() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<T>> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace fredsr
