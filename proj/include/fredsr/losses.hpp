#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 1e-4;  // (0.01 L)^2, L = 1
  double c2 = 9e-4;  // (0.03 L)^2
};

/// Normalized 1-D Gaussian taps. The 2-D window is their outer product.
std::vector<double> gaussian_window(int size, double sigma);

/// Window actually used for an H x W image: `p.window`, shrunk to the largest
/// odd size that fits when the image is smaller.
int effective_ssim_window(const SsimParams& p, std::int64_t height, std::int64_t width);

/// Mean SSIM over all valid window positions and channels of two NCHW
/// tensors. Differentiable; returns a scalar.
template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {});

/// mean(sqrt((x - y)^2 + eps)).
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& x, const Tensor<T>& y, double eps = 1e-6);

/// Per-channel Sobel magnitude sqrt(Gx^2 + Gy^2 + eps_g), reflect-padded so
/// the output has the input's shape. Gx responds to left-to-right increase.
template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& img, double eps_g = 1e-12);

/// mean((G(x) - G(y))^2) over Sobel magnitudes.
template <typename T>
Tensor<T> mge_loss(const Tensor<T>& x, const Tensor<T>& y);

inline constexpr double kProbabilityClamp = 1e-7;

/// -mean(log D(fake)), with D clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> adversarial_gen_loss(const Tensor<T>& d_fake);

/// -mean(log D(real)) - mean(log(1 - D(fake))), same clamp.
template <typename T>
Tensor<T> adversarial_disc_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

/// Frozen feature network: three stride-2 3x3 convolutions (no bias) with
/// ReLU, widths 8/16/32, weights drawn from a fixed seed.
template <typename T>
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 0x5eed, double weight_scale = 1.0);

  std::vector<Tensor<T>> features(const Tensor<T>& x) const;
  const std::vector<Tensor<T>>& kernels() const { return kernels_; }

 private:
  std::vector<Tensor<T>> kernels_;
};

/// Average over stages of mean|f(x) - f(y)| divided by the joint standard
/// deviation of both feature maps, which makes the loss independent of the
/// extractor's output scale.
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& x, const Tensor<T>& y, const PerceptualExtractor<T>& extractor);

struct LossWeights {
  double adversarial = 1.0;  // lambda 1
  double perceptual = 1.0;   // lambda 2
  double mge = 1.0;          // lambda 3
  double ssim = 1.0;         // lambda 4
  double charbonnier = 1.0;  // lambda 5
  double charbonnier_eps = 1e-6;
  double ssim_c1 = 1e-4;
  double ssim_c2 = 9e-4;
};

/// Raw generator loss terms. `ssim` holds the loss -SSIM.
template <typename T>
struct LossTerms {
  Tensor<T> adversarial;
  Tensor<T> perceptual;
  Tensor<T> mge;
  Tensor<T> ssim;
  Tensor<T> charbonnier;
};

template <typename T>
LossTerms<T> generator_loss_terms(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& d_fake,
                                  const LossWeights& w, const PerceptualExtractor<T>& extractor);

template <typename T>
Tensor<T> total_generator_loss(const LossTerms<T>& terms, const LossWeights& w);

/// 10 log10(peak^2 / MSE); +infinity when the inputs are identical.
double psnr(std::span<const double> x, std::span<const double> y, double peak = 1.0);
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0);

/// Scalar SSIM metric evaluated in double precision.
template <typename T>
double ssim_value(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {});

/// Fixed-precision rendering for reports; infinities print as "inf".
std::string format_metric(double value, int precision = 6);

}  // namespace fredsr
