#include "fredsr/losses.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "fredsr/errors.hpp"
#include "fredsr/nets.hpp"
#include "fredsr/ops.hpp"

namespace fredsr {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& x, const Tensor<T>& y, const char* what) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(what) + ": shapes differ, " + shape_string(x.shape()) + " vs " +
                     shape_string(y.shape()));
  }
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW, got " + shape_string(x.shape()));
}

// (N, C, H, W) -> (N*C, 1, H, W) so per-channel filters run as one conv.
template <typename T>
Tensor<T> planes(const Tensor<T>& x) {
  return reshape(x, {x.dim(0) * x.dim(1), 1, x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> gaussian_blur_valid(const Tensor<T>& x, const std::vector<double>& taps) {
  const auto k = static_cast<std::int64_t>(taps.size());
  std::vector<T> t(taps.begin(), taps.end());
  Tensor<T> row({1, 1, 1, k}, t), col({1, 1, k, 1}, t);
  return conv2d(conv2d(x, row, Tensor<T>()), col, Tensor<T>());
}

}  // namespace

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

int effective_ssim_window(const SsimParams& p, std::int64_t height, std::int64_t width) {
  const auto fit = static_cast<int>(std::min<std::int64_t>({p.window, height, width}));
  return fit % 2 == 1 ? fit : fit - 1;
}

template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p) {
  require_same_shape(x, y, "ssim");
  const int win = effective_ssim_window(p, x.dim(2), x.dim(3));
  if (win < 1) throw ShapeError("ssim: empty image");
  const auto taps = gaussian_window(win, p.sigma);
  const auto xp = planes(x), yp = planes(y);
  auto mu_x = gaussian_blur_valid(xp, taps);
  auto mu_y = gaussian_blur_valid(yp, taps);
  auto mu_xx = square(mu_x), mu_yy = square(mu_y), mu_xy = mu_x * mu_y;
  auto var_x = gaussian_blur_valid(square(xp), taps) - mu_xx;
  auto var_y = gaussian_blur_valid(square(yp), taps) - mu_yy;
  auto cov = gaussian_blur_valid(xp * yp, taps) - mu_xy;
  const T c1 = static_cast<T>(p.c1), c2 = static_cast<T>(p.c2);
  // Written so that x == y makes numerator and denominator bitwise equal.
  auto num = ((mu_xy + mu_xy) + c1) * ((cov + cov) + c2);
  auto den = ((mu_xx + mu_yy) + c1) * ((var_x + var_y) + c2);
  return mean_all(num / den);
}

template <typename T>
Tensor<T> charbonnier(const Tensor<T>& x, const Tensor<T>& y, double eps) {
  if (!(eps > 0)) throw InvalidArgument("charbonnier epsilon must be positive");
  if (x.shape() != y.shape()) throw ShapeError("charbonnier: shapes differ");
  return mean_all(sqrt(square(x - y) + static_cast<T>(eps)));
}

template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& img, double eps_g) {
  if (img.rank() != 4 || img.dim(2) < 3 || img.dim(3) < 3) {
    throw ShapeError("sobel needs an NCHW image of at least 3x3, got " + shape_string(img.shape()));
  }
  const std::vector<T> k = {-1, 0, 1, -2, 0, 2, -1, 0, 1,   // Gx
                            -1, -2, -1, 0, 0, 0, 1, 2, 1};  // Gy
  Tensor<T> kernel({2, 1, 3, 3}, k);
  auto g = conv2d(planes(img), kernel, Tensor<T>(), {1, 1, PadMode::kReflect});
  auto gx = narrow(g, 1, 0, 1), gy = narrow(g, 1, 1, 1);
  auto mag = sqrt(square(gx) + square(gy) + static_cast<T>(eps_g));
  return reshape(mag, img.shape());
}

template <typename T>
Tensor<T> mge_loss(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "mge");
  return mean_all(square(sobel_magnitude(x) - sobel_magnitude(y)));
}

template <typename T>
Tensor<T> adversarial_gen_loss(const Tensor<T>& d_fake) {
  const T lo = static_cast<T>(kProbabilityClamp), hi = static_cast<T>(1 - kProbabilityClamp);
  return neg(mean_all(log(clamp(d_fake, lo, hi))));
}

template <typename T>
Tensor<T> adversarial_disc_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  const T lo = static_cast<T>(kProbabilityClamp), hi = static_cast<T>(1 - kProbabilityClamp);
  auto real_term = mean_all(log(clamp(d_real, lo, hi)));
  auto fake_term = mean_all(log(rsub(clamp(d_fake, lo, hi), T(1))));
  return neg(real_term + fake_term);
}

template <typename T>
PerceptualExtractor<T>::PerceptualExtractor(std::uint64_t seed, double weight_scale) {
  Initializer init(seed);
  int in = 3;
  for (int width : {8, 16, 32}) {
    auto w = init.he_uniform(static_cast<std::size_t>(width * in * 9), std::int64_t{in} * 9, weight_scale);
    kernels_.emplace_back(Shape{width, in, 3, 3}, std::vector<T>(w.begin(), w.end()));
    in = width;
  }
}

template <typename T>
std::vector<Tensor<T>> PerceptualExtractor<T>::features(const Tensor<T>& x) const {
  std::vector<Tensor<T>> out;
  auto h = x;
  for (const auto& k : kernels_) {
    h = relu(conv2d(h, k, Tensor<T>(), {2, 1, PadMode::kReflect}));
    out.push_back(h);
  }
  return out;
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& x, const Tensor<T>& y, const PerceptualExtractor<T>& extractor) {
  require_same_shape(x, y, "perceptual");
  const auto fx = extractor.features(x), fy = extractor.features(y);
  Tensor<T> total;
  for (std::size_t s = 0; s < fx.size(); ++s) {
    auto both = cat(std::vector<Tensor<T>>{fx[s], fy[s]}, 0);
    auto centered = both - mean_all(both);
    auto stdev = sqrt(mean_all(square(centered)) + static_cast<T>(1e-12));
    auto stage = mean_all(abs(fx[s] - fy[s])) / stdev;
    total = total.defined() ? total + stage : stage;
  }
  return total * static_cast<T>(1.0 / static_cast<double>(fx.size()));
}

template <typename T>
LossTerms<T> generator_loss_terms(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& d_fake,
                                  const LossWeights& w, const PerceptualExtractor<T>& extractor) {
  SsimParams sp;
  sp.c1 = w.ssim_c1;
  sp.c2 = w.ssim_c2;
  LossTerms<T> t;
  t.adversarial = adversarial_gen_loss(d_fake);
  t.perceptual = perceptual_loss(sr, hr, extractor);
  t.mge = mge_loss(sr, hr);
  t.ssim = neg(ssim(sr, hr, sp));
  t.charbonnier = charbonnier(sr, hr, w.charbonnier_eps);
  return t;
}

template <typename T>
Tensor<T> total_generator_loss(const LossTerms<T>& t, const LossWeights& w) {
  auto total = t.adversarial * static_cast<T>(w.adversarial);
  total = total + t.perceptual * static_cast<T>(w.perceptual);
  total = total + t.mge * static_cast<T>(w.mge);
  total = total + t.ssim * static_cast<T>(w.ssim);
  return total + t.charbonnier * static_cast<T>(w.charbonnier);
}

double psnr(std::span<const double> x, std::span<const double> y, double peak) {
  if (x.size() != y.size() || x.empty()) throw ShapeError("psnr: inputs differ in size or are empty");
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sse += (x[i] - y[i]) * (x[i] - y[i]);
  const double mse = sse / static_cast<double>(x.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak) {
  if (x.shape() != y.shape()) throw ShapeError("psnr: shapes differ");
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  return psnr(a, b, peak);
}

template <typename T>
double ssim_value(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p) {
  return ssim(x.detach().template cast<double>(), y.detach().template cast<double>(), p).item();
}

std::string format_metric(double value, int precision) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, value);
  return buf;
}

#define FREDSR_INSTANTIATE_LOSSES(T)                                                                          \
  template Tensor<T> ssim(const Tensor<T>&, const Tensor<T>&, const SsimParams&);                             \
  template Tensor<T> charbonnier(const Tensor<T>&, const Tensor<T>&, double);                                 \
  template Tensor<T> sobel_magnitude(const Tensor<T>&, double);                                               \
  template Tensor<T> mge_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> adversarial_gen_loss(const Tensor<T>&);                                                  \
  template Tensor<T> adversarial_disc_loss(const Tensor<T>&, const Tensor<T>&);                               \
  template class PerceptualExtractor<T>;                                                                      \
  template Tensor<T> perceptual_loss(const Tensor<T>&, const Tensor<T>&, const PerceptualExtractor<T>&);      \
  template LossTerms<T> generator_loss_terms(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                             const LossWeights&, const PerceptualExtractor<T>&);              \
  template Tensor<T> total_generator_loss(const LossTerms<T>&, const LossWeights&);                           \
  template double psnr(const Tensor<T>&, const Tensor<T>&, double);                                           \
  template double ssim_value(const Tensor<T>&, const Tensor<T>&, const SsimParams&);

FREDSR_INSTANTIATE_LOSSES(float)
FREDSR_INSTANTIATE_LOSSES(double)

}  // namespace fredsr
