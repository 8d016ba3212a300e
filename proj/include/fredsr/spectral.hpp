#pragma once

#include <cstdint>

#include "fredsr/tensor.hpp"

namespace fredsr {

/// Real 2-D FFT of an NCHW tensor over (H, W). Returns N x 2C x H x (W/2+1):
/// channels [0, C) hold real parts, [C, 2C) imaginary parts. Unnormalized.
/// Differentiable; the backward pass applies the adjoint transform.
template <typename T>
Tensor<T> rfft2d(const Tensor<T>& x);

/// Inverse of rfft2d: consumes N x 2C x H x (out_w/2+1) and returns
/// N x C x H x out_w, scaled by 1/(H*out_w). Differentiable.
template <typename T>
Tensor<T> irfft2d(const Tensor<T>& spectrum, std::int64_t out_w);

}  // namespace fredsr
