#include "fredsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "autograd.hpp"
#include "fredsr/errors.hpp"

namespace fredsr {

namespace {

using detail::grad_of;
using detail::make_result;

// For each output element, the flat index of the contributing element of
// each operand. Empty vectors mean "same index as output" (equal shapes).
struct Broadcast {
  Shape out;
  std::vector<std::int64_t> a_index;
  std::vector<std::int64_t> b_index;
  bool identity_a = false;
  bool identity_b = false;
};

std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[offset + i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

std::vector<std::int64_t> expand_index(const std::vector<std::int64_t>& strides, const Shape& out) {
  const auto n = shape_numel(out);
  std::vector<std::int64_t> index(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(out.size(), 0);
  std::int64_t flat = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    index[static_cast<std::size_t>(i)] = flat;
    for (std::size_t axis = out.size(); axis-- > 0;) {
      if (++counter[axis] < out[axis]) {
        flat += strides[axis];
        break;
      }
      flat -= strides[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
  return index;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.identity_a = plan.identity_b = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    plan.out[i] = ea == 1 ? eb : ea;
  }
  plan.identity_a = a == plan.out;
  plan.identity_b = b == plan.out;
  if (!plan.identity_a) plan.a_index = expand_index(broadcast_strides(a, plan.out), plan.out);
  if (!plan.identity_b) plan.b_index = expand_index(broadcast_strides(b, plan.out), plan.out);
  return plan;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const auto n = static_cast<std::size_t>(shape_numel(plan->out));
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  if (plan->identity_a && plan->identity_b) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto ia = plan->identity_a ? i : static_cast<std::size_t>(plan->a_index[i]);
      const auto ib = plan->identity_b ? i : static_cast<std::size_t>(plan->b_index[i]);
      out[i] = f(ad[ia], bd[ib]);
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<T>(plan->out, std::move(out), op, {&a, &b},
                        [ai, bi, plan, da, db](const detail::TensorImpl<T>& o) {
                          auto* ga = grad_of(ai);
                          auto* gb = grad_of(bi);
                          const auto& av = ai->data;
                          const auto& bv = bi->data;
                          for (std::size_t i = 0; i < o.data.size(); ++i) {
                            const auto ia = plan->identity_a ? i : static_cast<std::size_t>(plan->a_index[i]);
                            const auto ib = plan->identity_b ? i : static_cast<std::size_t>(plan->b_index[i]);
                            const T g = o.grad[i];
                            if (ga) (*ga)[ia] += g * da(av[ia], bv[ib], o.data[i]);
                            if (gb) (*gb)[ib] += g * db(av[ia], bv[ib], o.data[i]);
                          }
                        });
}

// d is the local derivative given (input, output).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, const char* op, F f, D d) {
  auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), op, {&a}, [ai, d](const detail::TensorImpl<T>& o) {
    auto& ga = *grad_of(ai);
    for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += o.grad[i] * d(ai->data[i], o.data[i]);
  });
}

template <typename T>
void check_domain(const Tensor<T>& a, const char* op) {
  if constexpr (std::is_same_v<T, double>) {
    if (!strict_domain()) return;
    for (T v : a.data()) {
      if (v < T(0)) throw DomainError(std::string(op) + " of negative value " + std::to_string(v));
    }
  }
}

std::vector<int> normalize_axes(const std::vector<int>& axes, std::size_t rank) {
  std::vector<int> out;
  for (int axis : axes) {
    const int a = axis < 0 ? axis + static_cast<int>(rank) : axis;
    if (a < 0 || a >= static_cast<int>(rank)) {
      throw AxisError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Maps every input element to its reduced output slot.
struct ReducePlan {
  Shape out_shape;
  Shape kept_shape;  // same rank as input, reduced axes set to 1
  std::vector<std::int64_t> slot;
  std::int64_t group = 1;
};

ReducePlan plan_reduce(const Shape& in, const std::vector<int>& axes, bool keepdim) {
  ReducePlan plan;
  plan.kept_shape = in;
  for (int a : axes) {
    plan.group *= in[static_cast<std::size_t>(a)];
    plan.kept_shape[static_cast<std::size_t>(a)] = 1;
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const bool reduced = std::find(axes.begin(), axes.end(), static_cast<int>(i)) != axes.end();
    if (!reduced || keepdim) plan.out_shape.push_back(reduced ? 1 : in[i]);
  }
  plan.slot = expand_index(broadcast_strides(plan.kept_shape, in), in);
  return plan;
}

template <typename T>
Tensor<T> identity_node(const Tensor<T>& a, const char* op) {
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::vector<T>(a.data().begin(), a.data().end()), op, {&a},
                        [ai](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
                        });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, std::type_identity_t<T> b) {
  return unary(a, "add_scalar", [b](T x) { return x + b; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, std::type_identity_t<T> b) {
  return unary(a, "mul_scalar", [b](T x) { return x * b; }, [b](T, T) { return b; });
}

template <typename T>
Tensor<T> rsub(const Tensor<T>& a, std::type_identity_t<T> b) {
  return unary(a, "rsub_scalar", [b](T x) { return b - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, std::type_identity_t<T> exponent) {
  return unary(
      a, "pow", [exponent](T x) { return std::pow(x, exponent); },
      [exponent](T x, T) { return exponent * std::pow(x, exponent - T(1)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  check_domain(a, "sqrt");
  return unary(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  check_domain(a, "log");
  return unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, std::type_identity_t<T> slope) {
  return unary(
      a, "leaky_relu", [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, std::type_identity_t<T> lo, std::type_identity_t<T> hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp bounds out of order");
  return unary(
      a, "clamp", [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim) {
  const auto norm = normalize_axes(axes, a.rank());
  if (norm.empty()) return identity_node(a, "sum");
  auto plan = std::make_shared<ReducePlan>(plan_reduce(a.shape(), norm, keepdim));
  std::vector<T> out(static_cast<std::size_t>(shape_numel(plan->out_shape)), T(0));
  auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) out[static_cast<std::size_t>(plan->slot[i])] += ad[i];
  auto ai = a.impl();
  return make_result<T>(plan->out_shape, std::move(out), "sum", {&a},
                        [ai, plan](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::size_t i = 0; i < ga.size(); ++i) {
                            ga[i] += o.grad[static_cast<std::size_t>(plan->slot[i])];
                          }
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim) {
  const auto norm = normalize_axes(axes, a.rank());
  if (norm.empty()) return identity_node(a, "mean");
  auto plan = std::make_shared<ReducePlan>(plan_reduce(a.shape(), norm, keepdim));
  std::vector<T> out(static_cast<std::size_t>(shape_numel(plan->out_shape)), T(0));
  auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) out[static_cast<std::size_t>(plan->slot[i])] += ad[i];
  // Division (not multiplication by 1/n) keeps a mean of identical values exact.
  const T count = static_cast<T>(plan->group);
  for (auto& v : out) v /= count;
  auto ai = a.impl();
  return make_result<T>(plan->out_shape, std::move(out), "mean", {&a},
                        [ai, plan, count](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::size_t i = 0; i < ga.size(); ++i) {
                            ga[i] += o.grad[static_cast<std::size_t>(plan->slot[i])] / count;
                          }
                        });
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim) {
  const auto norm = normalize_axes(axes, a.rank());
  if (norm.empty()) return identity_node(a, "max");
  auto plan = std::make_shared<ReducePlan>(plan_reduce(a.shape(), norm, keepdim));
  const auto n_out = static_cast<std::size_t>(shape_numel(plan->out_shape));
  std::vector<T> out(n_out, -std::numeric_limits<T>::infinity());
  auto argmax = std::make_shared<std::vector<std::int64_t>>(n_out, -1);
  auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const auto s = static_cast<std::size_t>(plan->slot[i]);
    if ((*argmax)[s] < 0 || ad[i] > out[s]) {
      out[s] = ad[i];
      (*argmax)[s] = static_cast<std::int64_t>(i);
    }
  }
  auto ai = a.impl();
  return make_result<T>(plan->out_shape, std::move(out), "max", {&a},
                        [ai, argmax](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::size_t s = 0; s < o.grad.size(); ++s) {
                            ga[static_cast<std::size_t>((*argmax)[s])] += o.grad[s];
                          }
                        });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  std::vector<int> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return identity_node(a, "sum");
  return sum(a, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  std::vector<int> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return identity_node(a, "mean");
  return mean(a, axes, false);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  auto ai = a.impl();
  return make_result<T>(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()), "reshape", {&a},
                        [ai](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                        });
}

template <typename T>
Tensor<T> cat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("cat of zero tensors");
  const auto& ref = parts.front().shape();
  const auto ax = static_cast<std::size_t>(normalize_axes({axis}, ref.size()).front());
  Shape out_shape = ref;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("cat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != ref[i]) {
        throw ShapeError("cat extent mismatch: " + shape_string(s) + " vs " + shape_string(ref));
      }
    }
    out_shape[ax] += s[ax];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= ref[i];
  for (std::size_t i = ax + 1; i < ref.size(); ++i) inner *= ref[i];

  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const std::int64_t out_row = out_shape[ax] * inner;
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    const std::int64_t row = p.shape()[ax] * inner;
    auto pd = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offsets.push_back(offset);
    offset += row;
  }

  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  auto result_impl = std::make_shared<detail::TensorImpl<T>>();
  result_impl->shape = out_shape;
  result_impl->data = std::move(out);
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.requires_grad();
  if (tracked) {
    result_impl->requires_grad = true;
    auto node = std::make_shared<detail::Node<T>>();
    node->op = "cat";
    for (const auto& p : parts) {
      if (p.requires_grad() &&
          std::find(node->parents.begin(), node->parents.end(), p.impl()) == node->parents.end()) {
        node->parents.push_back(p.impl());
      }
    }
    node->backward = [impls, offsets, outer, out_row, inner, ax](const detail::TensorImpl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto* g = grad_of(impls[k]);
        if (!g) continue;
        const std::int64_t row = impls[k]->shape[ax] * inner;
        for (std::int64_t r = 0; r < outer; ++r) {
          for (std::int64_t j = 0; j < row; ++j) {
            (*g)[static_cast<std::size_t>(r * row + j)] +=
                o.grad[static_cast<std::size_t>(r * out_row + offsets[k] + j)];
          }
        }
      }
    };
    result_impl->node = std::move(node);
  }
  return Tensor<T>::from_impl(std::move(result_impl));
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t length) {
  const auto& s = a.shape();
  const auto ax = static_cast<std::size_t>(normalize_axes({axis}, s.size()).front());
  if (start < 0 || length < 0 || start + length > s[ax]) {
    throw ShapeError("narrow [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside extent " + std::to_string(s[ax]));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = length;
  const std::int64_t in_row = s[ax] * inner;
  const std::int64_t out_row = length * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * out_row));
  auto ad = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(ad.begin() + o * in_row + start * inner, out_row, out.begin() + o * out_row);
  }
  auto ai = a.impl();
  return make_result<T>(out_shape, std::move(out), "narrow", {&a},
                        [ai, outer, in_row, out_row, start, inner](const detail::TensorImpl<T>& o) {
                          auto& ga = *grad_of(ai);
                          for (std::int64_t r = 0; r < outer; ++r) {
                            for (std::int64_t j = 0; j < out_row; ++j) {
                              ga[static_cast<std::size_t>(r * in_row + start * inner + j)] +=
                                  o.grad[static_cast<std::size_t>(r * out_row + j)];
                            }
                          }
                        });
}

#define FREDSR_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add(const Tensor<T>&, std::type_identity_t<T>);                     \
  template Tensor<T> mul(const Tensor<T>&, std::type_identity_t<T>);                     \
  template Tensor<T> rsub(const Tensor<T>&, std::type_identity_t<T>);                    \
  template Tensor<T> neg(const Tensor<T>&);                                              \
  template Tensor<T> square(const Tensor<T>&);                                           \
  template Tensor<T> pow(const Tensor<T>&, std::type_identity_t<T>);                     \
  template Tensor<T> sqrt(const Tensor<T>&);                                             \
  template Tensor<T> log(const Tensor<T>&);                                              \
  template Tensor<T> exp(const Tensor<T>&);                                              \
  template Tensor<T> abs(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                             \
  template Tensor<T> leaky_relu(const Tensor<T>&, std::type_identity_t<T>);              \
  template Tensor<T> clamp(const Tensor<T>&, std::type_identity_t<T>, std::type_identity_t<T>); \
  template Tensor<T> sum(const Tensor<T>&, const std::vector<int>&, bool);               \
  template Tensor<T> mean(const Tensor<T>&, const std::vector<int>&, bool);              \
  template Tensor<T> max(const Tensor<T>&, const std::vector<int>&, bool);               \
  template Tensor<T> sum_all(const Tensor<T>&);                                          \
  template Tensor<T> mean_all(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
  template Tensor<T> cat(const std::vector<Tensor<T>>&, int);                            \
  template Tensor<T> narrow(const Tensor<T>&, int, std::int64_t, std::int64_t);

FREDSR_INSTANTIATE_OPS(float)
FREDSR_INSTANTIATE_OPS(double)

}  // namespace fredsr
