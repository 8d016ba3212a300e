#include <Eigen/Core>
#include <cmath>
#include <string>

#include "autograd.hpp"
#include "fredsr/errors.hpp"
#include "fredsr/ops.hpp"

namespace fredsr {

namespace {

using detail::grad_of;
using detail::make_result;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Index of the source pixel for a padded coordinate; -1 means zero padding.
inline std::int64_t pad_source(std::int64_t i, std::int64_t n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  if (mode == PadMode::kZero) return -1;
  // reflect without repeating the edge: -1 -> 1, n -> n-2
  if (i < 0) return -i;
  return 2 * (n - 1) - i;
}

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kh, kw, stride;
  std::int64_t out_h, out_w;
  std::int64_t rows() const { return channels * kh * kw; }
  std::int64_t cols() const { return out_h * out_w; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const T* src = plane + (oy * g.stride + ki) * g.width + kj;
          T* dst = row + oy * g.out_w;
          if (g.stride == 1) {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) dst[ox] = src[ox];
          } else {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) dst[ox] = src[ox * g.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          T* dst = plane + (oy * g.stride + ki) * g.width + kj;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int stride) {
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  const std::int64_t batch = xs[0];
  const std::int64_t out_ch = ks[0];
  ConvGeometry g{xs[1], xs[2], xs[3], ks[2], ks[3], stride, 0, 0};
  if (g.height < g.kh || g.width < g.kw) {
    throw ShapeError("conv2d kernel " + shape_string(ks) + " larger than input " + shape_string(xs));
  }
  g.out_h = (g.height - g.kh) / stride + 1;
  g.out_w = (g.width - g.kw) / stride + 1;

  const std::int64_t in_plane = g.channels * g.height * g.width;
  const std::int64_t out_plane = out_ch * g.cols();
  std::vector<T> out(static_cast<std::size_t>(batch * out_plane));
  std::vector<T> col(g.direct() ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMapMat<T> w(kernel.data().data(), out_ch, g.rows());
  for (std::int64_t n = 0; n < batch; ++n) {
    const T* xn = x.data().data() + n * in_plane;
    const T* colp = xn;
    if (!g.direct()) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    MapMat<T> o(out.data() + n * out_plane, out_ch, g.cols());
    o.noalias() = w * ConstMapMat<T>(colp, g.rows(), g.cols());
    if (bias.defined()) {
      for (std::int64_t oc = 0; oc < out_ch; ++oc) o.row(oc).array() += bias.data()[static_cast<std::size_t>(oc)];
    }
  }

  auto xi = x.impl();
  auto ki = kernel.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result<T>(Shape{batch, out_ch, g.out_h, g.out_w}, std::move(out), "conv2d", {&x, &kernel, &bias},
                        [xi, ki, bi, g, batch, out_ch, in_plane, out_plane](const detail::TensorImpl<T>& o) {
                          auto* gx = grad_of(xi);
                          auto* gk = grad_of(ki);
                          auto* gb = grad_of(bi);
                          std::vector<T> col(g.direct() ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
                          ConstMapMat<T> w(ki->data.data(), out_ch, g.rows());
                          for (std::int64_t n = 0; n < batch; ++n) {
                            ConstMapMat<T> go(o.grad.data() + n * out_plane, out_ch, g.cols());
                            if (gb) {
                              // Plain loop: Eigen's vectorized sum orders terms by alignment.
                              for (std::int64_t oc = 0; oc < out_ch; ++oc) {
                                const T* row = o.grad.data() + n * out_plane + oc * g.cols();
                                T acc = 0;
                                for (std::int64_t i = 0; i < g.cols(); ++i) acc += row[i];
                                (*gb)[static_cast<std::size_t>(oc)] += acc;
                              }
                            }
                            if (gk) {
                              const T* xn = xi->data.data() + n * in_plane;
                              const T* colp = xn;
                              if (!g.direct()) {
                                im2col(xn, g, col.data());
                                colp = col.data();
                              }
                              MapMat<T> dw(gk->data(), out_ch, g.rows());
                              dw.noalias() += go * ConstMapMat<T>(colp, g.rows(), g.cols()).transpose();
                            }
                            if (gx) {
                              T* gxn = gx->data() + n * in_plane;
                              if (g.direct()) {
                                MapMat<T> dx(gxn, g.rows(), g.cols());
                                dx.noalias() += w.transpose() * go;
                              } else {
                                MapMat<T> dcol(col.data(), g.rows(), g.cols());
                                dcol.noalias() = w.transpose() * go;
                                col2im_add(col.data(), g, gxn);
                              }
                            }
                          }
                        });
}

}  // namespace

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, int pad, PadMode mode) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("pad2d expects NCHW, got " + shape_string(s));
  if (pad < 0) throw InvalidArgument("negative padding");
  const std::int64_t h = s[2], w = s[3];
  if (mode == PadMode::kReflect && (pad >= h || pad >= w)) {
    throw ShapeError("reflect padding " + std::to_string(pad) + " needs spatial extent > pad, got " +
                     shape_string(s));
  }
  const std::int64_t ph = h + 2 * pad, pw = w + 2 * pad;
  const std::int64_t planes = s[0] * s[1];
  // Source index per padded pixel, shared by forward and backward.
  auto source = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(ph * pw));
  for (std::int64_t i = 0; i < ph; ++i) {
    const auto si = pad_source(i - pad, h, mode);
    for (std::int64_t j = 0; j < pw; ++j) {
      const auto sj = pad_source(j - pad, w, mode);
      (*source)[static_cast<std::size_t>(i * pw + j)] = (si < 0 || sj < 0) ? -1 : si * w + sj;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(planes * ph * pw), T(0));
  auto xd = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t k = 0; k < ph * pw; ++k) {
      const auto src = (*source)[static_cast<std::size_t>(k)];
      if (src >= 0) out[static_cast<std::size_t>(p * ph * pw + k)] = xd[static_cast<std::size_t>(p * h * w + src)];
    }
  }
  auto xi = x.impl();
  return make_result<T>(Shape{s[0], s[1], ph, pw}, std::move(out), "pad2d", {&x},
                        [xi, source, planes, h, w, ph, pw](const detail::TensorImpl<T>& o) {
                          auto& gx = *grad_of(xi);
                          for (std::int64_t p = 0; p < planes; ++p) {
                            for (std::int64_t k = 0; k < ph * pw; ++k) {
                              const auto src = (*source)[static_cast<std::size_t>(k)];
                              if (src >= 0) {
                                gx[static_cast<std::size_t>(p * h * w + src)] +=
                                    o.grad[static_cast<std::size_t>(p * ph * pw + k)];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dOptions& options) {
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW kernel, got " + shape_string(xs) + " and " +
                     shape_string(ks));
  }
  if (xs[1] != ks[1]) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(xs[1]) + ", kernel expects " +
                     std::to_string(ks[1]));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != ks[0])) {
    throw ShapeError("conv2d bias shape " + shape_string(bias.shape()) + " for " + std::to_string(ks[0]) +
                     " output channels");
  }
  if (options.stride < 1) throw InvalidArgument("conv2d stride must be >= 1");
  if (options.padding == 0) return conv2d_valid(x, kernel, bias, options.stride);
  return conv2d_valid(pad2d(x, options.padding, options.pad_mode), kernel, bias, options.stride);
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, NormMode mode) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("batch_norm2d expects NCHW, got " + shape_string(s));
  const std::int64_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  if (gamma.numel() != channels || beta.numel() != channels || state.running_mean.numel() != channels ||
      state.running_var.numel() != channels) {
    throw ShapeError("batch_norm2d parameters do not match " + std::to_string(channels) + " channels");
  }
  const std::int64_t count = batch * plane;
  auto xd = x.data();
  auto xhat = std::make_shared<std::vector<T>>(xd.size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(channels));
  std::vector<T> out(xd.size());
  const bool train = mode == NormMode::kTrain;
  for (std::int64_t c = 0; c < channels; ++c) {
    double mu, var;
    if (train) {
      double acc = 0;
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* p = xd.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0;
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* p = xd.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      auto rm = state.running_mean.mutable_data();
      auto rv = state.running_var.mutable_data();
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      const double m = state.momentum;
      rm[static_cast<std::size_t>(c)] = static_cast<T>((1 - m) * rm[static_cast<std::size_t>(c)] + m * mu);
      rv[static_cast<std::size_t>(c)] = static_cast<T>((1 - m) * rv[static_cast<std::size_t>(c)] + m * unbiased);
    } else {
      mu = state.running_mean.data()[static_cast<std::size_t>(c)];
      var = state.running_var.data()[static_cast<std::size_t>(c)];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
    (*inv_std)[static_cast<std::size_t>(c)] = is;
    const T gc = gamma.data()[static_cast<std::size_t>(c)];
    const T bc = beta.data()[static_cast<std::size_t>(c)];
    const T mu_t = static_cast<T>(mu);
    for (std::int64_t n = 0; n < batch; ++n) {
      const std::int64_t base = (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const auto k = static_cast<std::size_t>(base + i);
        const T h = (xd[k] - mu_t) * is;
        (*xhat)[k] = h;
        out[k] = gc * h + bc;
      }
    }
  }
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return make_result<T>(s, std::move(out), "batch_norm2d", {&x, &gamma, &beta},
                        [xi, gi, bi, xhat, inv_std, batch, channels, plane, count,
                         train](const detail::TensorImpl<T>& o) {
                          auto* gx = grad_of(xi);
                          auto* gg = grad_of(gi);
                          auto* gbeta = grad_of(bi);
                          for (std::int64_t c = 0; c < channels; ++c) {
                            double sum_g = 0, sum_gh = 0;
                            for (std::int64_t n = 0; n < batch; ++n) {
                              const std::int64_t base = (n * channels + c) * plane;
                              for (std::int64_t i = 0; i < plane; ++i) {
                                const auto k = static_cast<std::size_t>(base + i);
                                sum_g += o.grad[k];
                                sum_gh += static_cast<double>(o.grad[k]) * (*xhat)[k];
                              }
                            }
                            const auto cc = static_cast<std::size_t>(c);
                            if (gg) (*gg)[cc] += static_cast<T>(sum_gh);
                            if (gbeta) (*gbeta)[cc] += static_cast<T>(sum_g);
                            if (!gx) continue;
                            const T gamma_c = gi->data[cc];
                            const T is = (*inv_std)[cc];
                            const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
                            const T mean_gh = static_cast<T>(sum_gh / static_cast<double>(count));
                            for (std::int64_t n = 0; n < batch; ++n) {
                              const std::int64_t base = (n * channels + c) * plane;
                              for (std::int64_t i = 0; i < plane; ++i) {
                                const auto k = static_cast<std::size_t>(base + i);
                                if (train) {
                                  (*gx)[k] += gamma_c * is * (o.grad[k] - mean_g - (*xhat)[k] * mean_gh);
                                } else {
                                  (*gx)[k] += gamma_c * is * o.grad[k];
                                }
                              }
                            }
                          }
                        });
}

#define FREDSR_INSTANTIATE_CONV(T)                                                                 \
  template Tensor<T> pad2d(const Tensor<T>&, int, PadMode);                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&); \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, \
                                  NormMode);

FREDSR_INSTANTIATE_CONV(float)
FREDSR_INSTANTIATE_CONV(double)

}  // namespace fredsr
