#include "fredsr/spectral.hpp"

#include <string>

#include "autograd.hpp"
#include "fredsr/errors.hpp"
#include "fredsr/fft.hpp"

namespace fredsr {

namespace {

using detail::grad_of;
using detail::make_result;

std::size_t mirror_end(std::int64_t width) {
  return static_cast<std::size_t>(width) - fft::half_width(static_cast<std::size_t>(width));
}

}  // namespace

template <typename T>
Tensor<T> rfft2d(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("rfft2d expects NCHW, got " + shape_string(s));
  if (s[2] < 2 || s[3] < 2) throw ShapeError("rfft2d needs H, W >= 2, got " + shape_string(s));
  const std::int64_t batch = s[0], channels = s[1], h = s[2], w = s[3];
  const auto wh = static_cast<std::int64_t>(fft::half_width(static_cast<std::size_t>(w)));
  const std::int64_t in_plane = h * w, out_plane = h * wh;
  std::vector<T> out(static_cast<std::size_t>(batch * 2 * channels * out_plane));
  std::vector<double> plane(static_cast<std::size_t>(in_plane));
  auto xd = x.data();
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* src = xd.data() + (n * channels + c) * in_plane;
      std::copy(src, src + in_plane, plane.begin());
      const auto spec = fft::rfft2_plane(plane, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
      T* re = out.data() + (n * 2 * channels + c) * out_plane;
      T* im = out.data() + (n * 2 * channels + channels + c) * out_plane;
      for (std::int64_t k = 0; k < out_plane; ++k) {
        re[k] = static_cast<T>(spec[static_cast<std::size_t>(k)].real());
        im[k] = static_cast<T>(spec[static_cast<std::size_t>(k)].imag());
      }
    }
  }
  auto xi = x.impl();
  return make_result<T>(Shape{batch, 2 * channels, h, wh}, std::move(out), "rfft2d", {&x},
                        [xi, batch, channels, h, w, wh, in_plane, out_plane](const detail::TensorImpl<T>& o) {
                          auto& gx = *grad_of(xi);
                          std::vector<fft::Complex> g(static_cast<std::size_t>(out_plane));
                          for (std::int64_t n = 0; n < batch; ++n) {
                            for (std::int64_t c = 0; c < channels; ++c) {
                              const T* gre = o.grad.data() + (n * 2 * channels + c) * out_plane;
                              const T* gim = o.grad.data() + (n * 2 * channels + channels + c) * out_plane;
                              for (std::int64_t k = 0; k < out_plane; ++k) {
                                g[static_cast<std::size_t>(k)] = {static_cast<double>(gre[k]),
                                                                  static_cast<double>(gim[k])};
                              }
                              const auto back = fft::half_spectrum_to_real(g, static_cast<std::size_t>(h),
                                                                           static_cast<std::size_t>(w), 1.0);
                              T* dst = gx.data() + (n * channels + c) * in_plane;
                              for (std::int64_t k = 0; k < in_plane; ++k) {
                                dst[k] += static_cast<T>(back[static_cast<std::size_t>(k)]);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> irfft2d(const Tensor<T>& spectrum, std::int64_t out_w) {
  const auto& s = spectrum.shape();
  if (s.size() != 4 || s[1] % 2 != 0) {
    throw ShapeError("irfft2d expects N x 2C x H x Wh, got " + shape_string(s));
  }
  if (out_w < 1 || static_cast<std::int64_t>(fft::half_width(static_cast<std::size_t>(out_w))) != s[3]) {
    throw ShapeError("irfft2d output width " + std::to_string(out_w) + " inconsistent with half width " +
                     std::to_string(s[3]));
  }
  const std::int64_t batch = s[0], channels = s[1] / 2, h = s[2], wh = s[3], w = out_w;
  const std::int64_t in_plane = h * wh, out_plane = h * w;
  const double scale = 1.0 / static_cast<double>(h * w);
  std::vector<T> out(static_cast<std::size_t>(batch * channels * out_plane));
  std::vector<fft::Complex> spec(static_cast<std::size_t>(in_plane));
  auto sd = spectrum.data();
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* re = sd.data() + (n * 2 * channels + c) * in_plane;
      const T* im = sd.data() + (n * 2 * channels + channels + c) * in_plane;
      for (std::int64_t k = 0; k < in_plane; ++k) {
        spec[static_cast<std::size_t>(k)] = {static_cast<double>(re[k]), static_cast<double>(im[k])};
      }
      const auto real = fft::half_spectrum_to_real(spec, static_cast<std::size_t>(h), static_cast<std::size_t>(w), 2.0);
      T* dst = out.data() + (n * channels + c) * out_plane;
      for (std::int64_t k = 0; k < out_plane; ++k) dst[k] = static_cast<T>(real[static_cast<std::size_t>(k)] * scale);
    }
  }
  auto si = spectrum.impl();
  return make_result<T>(Shape{batch, channels, h, w}, std::move(out), "irfft2d", {&spectrum},
                        [si, batch, channels, h, w, wh, in_plane, out_plane, scale](const detail::TensorImpl<T>& o) {
                          auto& gs = *grad_of(si);
                          const std::size_t last_mirrored = mirror_end(w);
                          std::vector<double> g(static_cast<std::size_t>(out_plane));
                          for (std::int64_t n = 0; n < batch; ++n) {
                            for (std::int64_t c = 0; c < channels; ++c) {
                              const T* src = o.grad.data() + (n * channels + c) * out_plane;
                              std::copy(src, src + out_plane, g.begin());
                              const auto fwd =
                                  fft::rfft2_plane(g, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
                              T* gre = gs.data() + (n * 2 * channels + c) * in_plane;
                              T* gim = gs.data() + (n * 2 * channels + channels + c) * in_plane;
                              for (std::int64_t y = 0; y < h; ++y) {
                                for (std::int64_t x = 0; x < wh; ++x) {
                                  const auto k = static_cast<std::size_t>(y * wh + x);
                                  const auto ux = static_cast<std::size_t>(x);
                                  const double weight = (ux >= 1 && ux <= last_mirrored) ? 2.0 * scale : scale;
                                  gre[k] += static_cast<T>(weight * fwd[k].real());
                                  gim[k] += static_cast<T>(weight * fwd[k].imag());
                                }
                              }
                            }
                          }
                        });
}

template Tensor<float> rfft2d(const Tensor<float>&);
template Tensor<double> rfft2d(const Tensor<double>&);
template Tensor<float> irfft2d(const Tensor<float>&, std::int64_t);
template Tensor<double> irfft2d(const Tensor<double>&, std::int64_t);

}  // namespace fredsr
