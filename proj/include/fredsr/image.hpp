#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr {

enum class Provenance { kDecoded, kGenerated, kResampled };

/// Height x width x 3 RGB intensities in [0, 1], stored interleaved (HWC).
/// Values are clamped on construction; non-finite values are rejected.
class Image {
 public:
  Image() = default;
  Image(int height, int width, std::vector<float> rgb, Provenance provenance = Provenance::kGenerated);

  static Image filled(int height, int width, float r, float g, float b);

  int height() const { return height_; }
  int width() const { return width_; }
  static constexpr int channels() { return 3; }
  bool empty() const { return height_ == 0; }

  float at(int y, int x, int c) const { return values_[static_cast<std::size_t>((y * width_ + x) * 3 + c)]; }
  std::span<const float> values() const { return values_; }
  Provenance provenance() const { return provenance_; }

  /// Top-left anchored crop.
  Image crop(int y, int x, int height, int width) const;

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.values_ == b.values_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
  Provenance provenance_ = Provenance::kGenerated;
};

/// Signed difference image, values in [-1, 1].
class ResidualImage {
 public:
  ResidualImage(int height, int width, std::vector<float> rgb);
  /// hr - base, which always lies in [-1, 1].
  static ResidualImage between(const Image& hr, const Image& base);

  int height() const { return height_; }
  int width() const { return width_; }
  std::span<const float> values() const { return values_; }

  /// clamp(base + residual, 0, 1).
  Image apply_to(const Image& base) const;

 private:
  int height_;
  int width_;
  std::vector<float> values_;
};

enum class ResampleFilter { kBicubic, kBilinear };

/// Separable resampling of one channel plane (row-major). Output sample x
/// reads source coordinate (x + 0.5) * in/out - 0.5. Borders clamp to the
/// edge. When shrinking, the kernel is stretched by the scale factor so the
/// filter also acts as an anti-alias prefilter. No clamping of values.
std::vector<double> resample_plane(std::span<const double> plane, int height, int width, int out_height,
                                   int out_width, ResampleFilter filter);

/// Keys cubic convolution kernel with a = -0.5.
double keys_cubic(double x);
double linear_kernel(double x);

Image resample(const Image& img, int out_height, int out_width, ResampleFilter filter);
inline Image resample_bicubic(const Image& img, int out_height, int out_width) {
  return resample(img, out_height, out_width, ResampleFilter::kBicubic);
}
inline Image resample_bilinear(const Image& img, int out_height, int out_width) {
  return resample(img, out_height, out_width, ResampleFilter::kBilinear);
}

struct ImagePair {
  Image lr;
  Image hr;
};

/// Crops `img` to multiples of `scale` and bicubic-downsamples it by exactly
/// `scale`. Throws TooSmall when either side is shorter than `scale`.
ImagePair make_lr_hr_pair(const Image& img, int scale);

/// Rounds every value to the nearest multiple of 1/255.
Image quantize8(const Image& img);

/// BT.601 luma, Y = 0.299 R + 0.587 G + 0.114 B, as a 1 x 1 x H x W tensor.
template <typename T>
Tensor<T> luma_tensor(const Image& img);

/// Stacks images of equal size into an N x 3 x H x W tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images);
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  return images_to_tensor<T>(std::span<const Image>(&img, 1));
}

/// Extracts batch item `index` of an N x 3 x H x W tensor, clamping to [0, 1].
template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::int64_t index = 0, Provenance provenance = Provenance::kGenerated);

}  // namespace fredsr
