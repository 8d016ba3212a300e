#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr {

// Elementwise binary operations broadcast numpy-style: shapes are aligned on
// trailing axes and extents of 1 stretch.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, std::type_identity_t<T> b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, std::type_identity_t<T> b);
/// b - a
template <typename T> Tensor<T> rsub(const Tensor<T>& a, std::type_identity_t<T> b);

template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> pow(const Tensor<T>& a, std::type_identity_t<T> exponent);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, std::type_identity_t<T> slope);
/// Gradient passes only where lo < a < hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, std::type_identity_t<T> lo, std::type_identity_t<T> hi);

// Reductions. An empty axis list returns the input unchanged (as a new node).
template <typename T>
Tensor<T> sum(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false);
template <typename T>
Tensor<T> mean(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false);
/// Gradient flows to the first maximal element of each reduced group.
template <typename T>
Tensor<T> max(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false);
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);

// Shape manipulation.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> cat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t length);

enum class PadMode { kZero, kReflect };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  PadMode pad_mode = PadMode::kZero;
};

/// Pads H and W of an NCHW tensor by `pad` on every side.
template <typename T> Tensor<T> pad2d(const Tensor<T>& x, int pad, PadMode mode);

/// Cross-correlation of NCHW `x` with OIHW `kernel`. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dOptions& options = {});

enum class NormMode { kTrain, kEval };

/// Running statistics owned by a batch-norm layer. Updated in place by
/// train-mode forward passes; never part of a graph.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::int64_t channels = 0)
      : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::full({channels}, T(1))) {}
};

/// Train mode normalizes with biased batch variance and folds the unbiased
/// variance into the running estimate.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, NormMode mode);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, std::type_identity_t<T> b) { return add(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, std::type_identity_t<T> b) { return mul(a, b); }
template <typename T> Tensor<T> operator*(std::type_identity_t<T> b, const Tensor<T>& a) { return mul(a, b); }
template <typename T> Tensor<T> operator-(std::type_identity_t<T> b, const Tensor<T>& a) { return rsub(a, b); }

}  // namespace fredsr
