#include "fredsr/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fredsr/errors.hpp"

namespace fredsr {

namespace {

float clamp01(float v) { return std::min(std::max(v, 0.0f), 1.0f); }

struct Taps {
  std::vector<int> index;
  std::vector<double> weight;
  std::size_t reference = 0;  // tap with the largest weight
};

std::vector<Taps> compute_taps(int in, int out, ResampleFilter filter) {
  const double radius = filter == ResampleFilter::kBicubic ? 2.0 : 1.0;
  auto kernel = filter == ResampleFilter::kBicubic ? keys_cubic : linear_kernel;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(scale, 1.0);
  const double support = radius * stretch;
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  for (int x = 0; x < out; ++x) {
    const double center = (x + 0.5) * scale - 0.5;
    const int first = static_cast<int>(std::ceil(center - support));
    const int last = static_cast<int>(std::floor(center + support));
    auto& t = taps[static_cast<std::size_t>(x)];
    double total = 0;
    for (int j = first; j <= last; ++j) {
      const double w = kernel((center - j) / stretch);
      if (w == 0.0) continue;
      t.index.push_back(std::clamp(j, 0, in - 1));
      t.weight.push_back(w);
      total += w;
    }
    for (auto& w : t.weight) w /= total;
    t.reference = static_cast<std::size_t>(
        std::max_element(t.weight.begin(), t.weight.end()) - t.weight.begin());
  }
  return taps;
}

// Accumulating differences against the dominant tap makes constant inputs
// (and unit-weight taps) reproduce exactly.
double apply_taps(const Taps& t, const double* src, std::ptrdiff_t stride) {
  const double ref = src[t.index[t.reference] * stride];
  double acc = 0;
  for (std::size_t k = 0; k < t.index.size(); ++k) {
    if (k == t.reference) continue;
    acc += t.weight[k] * (src[t.index[k] * stride] - ref);
  }
  return ref + acc;
}

}  // namespace

Image::Image(int height, int width, std::vector<float> rgb, Provenance provenance)
    : height_(height), width_(width), values_(std::move(rgb)), provenance_(provenance) {
  if (height < 1 || width < 1) {
    throw InvalidArgument("image dimensions must be positive, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3) {
    throw ShapeError("image buffer size does not match " + std::to_string(height) + "x" + std::to_string(width) + "x3");
  }
  for (auto& v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite image value");
    v = clamp01(v);
  }
}

Image Image::filled(int height, int width, float r, float g, float b) {
  std::vector<float> v(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3);
  for (std::size_t i = 0; i < v.size(); i += 3) {
    v[i] = r;
    v[i + 1] = g;
    v[i + 2] = b;
  }
  return Image(height, width, std::move(v));
}

Image Image::crop(int y, int x, int height, int width) const {
  if (y < 0 || x < 0 || height < 1 || width < 1 || y + height > height_ || x + width > width_) {
    throw InvalidArgument("crop window outside image");
  }
  std::vector<float> out(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3);
  for (int r = 0; r < height; ++r) {
    const auto src = values_.begin() + static_cast<std::ptrdiff_t>(((y + r) * width_ + x) * 3);
    std::copy(src, src + width * 3, out.begin() + static_cast<std::ptrdiff_t>(r * width * 3));
  }
  return Image(height, width, std::move(out), provenance_);
}

ResidualImage::ResidualImage(int height, int width, std::vector<float> rgb)
    : height_(height), width_(width), values_(std::move(rgb)) {
  if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3) {
    throw ShapeError("residual buffer size mismatch");
  }
  for (auto& v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite residual value");
    v = std::min(std::max(v, -1.0f), 1.0f);
  }
}

ResidualImage ResidualImage::between(const Image& hr, const Image& base) {
  if (hr.height() != base.height() || hr.width() != base.width()) throw ShapeError("residual size mismatch");
  std::vector<float> v(hr.values().size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = hr.values()[i] - base.values()[i];
  return ResidualImage(hr.height(), hr.width(), std::move(v));
}

Image ResidualImage::apply_to(const Image& base) const {
  if (base.height() != height_ || base.width() != width_) throw ShapeError("residual size mismatch");
  std::vector<float> v(values_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = clamp01(base.values()[i] + values_[i]);
  return Image(height_, width_, std::move(v), Provenance::kGenerated);
}

double keys_cubic(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

double linear_kernel(double x) {
  const double t = std::abs(x);
  return t < 1.0 ? 1.0 - t : 0.0;
}

std::vector<double> resample_plane(std::span<const double> plane, int height, int width, int out_height,
                                   int out_width, ResampleFilter filter) {
  if (out_height < 1 || out_width < 1) throw InvalidArgument("resample target must be at least 1x1");
  if (plane.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ShapeError("resample plane size mismatch");
  }
  const auto col_taps = compute_taps(width, out_width, filter);
  const auto row_taps = compute_taps(height, out_height, filter);
  std::vector<double> horizontal(static_cast<std::size_t>(height) * static_cast<std::size_t>(out_width));
  for (int y = 0; y < height; ++y) {
    const double* row = plane.data() + static_cast<std::ptrdiff_t>(y) * width;
    for (int x = 0; x < out_width; ++x) {
      horizontal[static_cast<std::size_t>(y * out_width + x)] = apply_taps(col_taps[static_cast<std::size_t>(x)], row, 1);
    }
  }
  std::vector<double> out(static_cast<std::size_t>(out_height) * static_cast<std::size_t>(out_width));
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      out[static_cast<std::size_t>(y * out_width + x)] =
          apply_taps(row_taps[static_cast<std::size_t>(y)], horizontal.data() + x, out_width);
    }
  }
  return out;
}

Image resample(const Image& img, int out_height, int out_width, ResampleFilter filter) {
  const int h = img.height(), w = img.width();
  std::vector<float> out(static_cast<std::size_t>(out_height) * static_cast<std::size_t>(out_width) * 3);
  std::vector<double> plane(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.values()[i * 3 + static_cast<std::size_t>(c)];
    const auto res = resample_plane(plane, h, w, out_height, out_width, filter);
    for (std::size_t i = 0; i < res.size(); ++i) {
      out[i * 3 + static_cast<std::size_t>(c)] = static_cast<float>(std::min(std::max(res[i], 0.0), 1.0));
    }
  }
  return Image(out_height, out_width, std::move(out), Provenance::kResampled);
}

ImagePair make_lr_hr_pair(const Image& img, int scale) {
  if (scale < 2) throw InvalidArgument("scale must be >= 2, got " + std::to_string(scale));
  if (img.height() < scale || img.width() < scale) {
    throw TooSmall("image " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                   " is smaller than scale " + std::to_string(scale));
  }
  const int lr_h = img.height() / scale, lr_w = img.width() / scale;
  Image hr = img.crop(0, 0, lr_h * scale, lr_w * scale);
  Image lr = resample_bicubic(hr, lr_h, lr_w);
  return {std::move(lr), std::move(hr)};
}

Image quantize8(const Image& img) {
  std::vector<float> v(img.values().begin(), img.values().end());
  for (auto& x : v) x = static_cast<float>(std::lround(x * 255.0f)) / 255.0f;
  return Image(img.height(), img.width(), std::move(v), img.provenance());
}

template <typename T>
Tensor<T> luma_tensor(const Image& img) {
  std::vector<T> y(static_cast<std::size_t>(img.height()) * static_cast<std::size_t>(img.width()));
  auto v = img.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<T>(0.299 * v[i * 3] + 0.587 * v[i * 3 + 1] + 0.114 * v[i * 3 + 2]);
  }
  return Tensor<T>({1, 1, img.height(), img.width()}, std::move(y));
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("no images to stack");
  const int h = images[0].height(), w = images[0].width();
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  std::vector<T> out(images.size() * 3 * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height() != h || images[n].width() != w) throw ShapeError("images differ in size");
    auto v = images[n].values();
    for (std::size_t c = 0; c < 3; ++c) {
      T* dst = out.data() + (n * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(v[i * 3 + c]);
    }
  }
  return Tensor<T>({static_cast<std::int64_t>(images.size()), 3, h, w}, std::move(out));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::int64_t index, Provenance provenance) {
  const auto& s = t.shape();
  if (s.size() != 4 || s[1] != 3 || index < 0 || index >= s[0]) {
    throw ShapeError("expected N x 3 x H x W tensor, got " + shape_string(s));
  }
  const auto plane = static_cast<std::size_t>(s[2] * s[3]);
  std::vector<float> v(plane * 3);
  const T* src = t.data().data() + static_cast<std::size_t>(index) * 3 * plane;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      v[i * 3 + c] = static_cast<float>(std::min(std::max(src[c * plane + i], T(0)), T(1)));
    }
  }
  return Image(static_cast<int>(s[2]), static_cast<int>(s[3]), std::move(v), provenance);
}

template Tensor<float> luma_tensor(const Image&);
template Tensor<double> luma_tensor(const Image&);
template Tensor<float> images_to_tensor(std::span<const Image>);
template Tensor<double> images_to_tensor(std::span<const Image>);
template Image tensor_to_image(const Tensor<float>&, std::int64_t, Provenance);
template Image tensor_to_image(const Tensor<double>&, std::int64_t, Provenance);

}  // namespace fredsr
